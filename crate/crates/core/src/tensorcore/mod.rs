//! Dense numerics and a small reverse-mode differentiation engine.
//!
//! Everything is `f64`. Vectors are plain slices or [`Vec64`], matrices are
//! row-major [`Matrix`]. Differentiable computations are recorded on a
//! [`Tape`] whose leaves borrow from a [`ParamSet`]; [`Tape::backward`]
//! returns [`Gradients`] keyed by [`ParamId`] which are folded back into
//! the set before an [`sgd_step`].

mod dense;
mod gradcheck;
mod tape;

pub use dense::{
    argmax, cholesky_solve, cosine_sim, dot, norm, normalize, softmax, softmax_cross_entropy,
    Matrix, Vec64,
};
pub use gradcheck::{finite_diff_check, GradCheck};
pub use tape::{sgd_step, sigmoid, Gradients, Param, ParamId, ParamSet, Tape, Var};

use thiserror::Error;

/// Norms at or below this are treated as degenerate by inference paths.
pub const NORM_EPS: f64 = 1e-12;

/// Norm floor applied inside normalisation while training, so that a
/// vanishing mixed text feature still has finite gradients.
pub const TRAIN_NORM_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumError {
    #[error("degenerate norm {norm:e} (must exceed {NORM_EPS:e})")]
    DegenerateNorm { norm: f64 },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value encountered")]
    NonFinite,
    #[error("empty vector")]
    Empty,
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
}
