//! Frozen text-side machinery: tokenizer, toy text encoder, learnable
//! context tokens and the conditioning meta-network.

mod context;
mod text;
mod tokenizer;

pub use context::{ContextTokens, MetaNet, MetaVars};
pub use text::{CountedEncoder, EncoderConfig, EncoderVars, PreparedText, ToyTextEncoder};
pub use tokenizer::{Tokenizer, DEFAULT_VOCAB};

use thiserror::Error;

use crate::tensorcore::NumError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EncodeError {
    #[error("text is empty")]
    EmptyText,
    #[error("degenerate norm {0:e} in encoder output")]
    DegenerateNorm(f64),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("cannot align encoder: {0}")]
    Alignment(String),
    #[error(transparent)]
    Num(#[from] NumError),
}
