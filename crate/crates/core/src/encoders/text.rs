use std::cell::Cell;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ContextTokens, EncodeError, Tokenizer, DEFAULT_VOCAB};
use crate::rng::SeededRng;
use crate::tensorcore::{
    cholesky_solve, norm, Matrix, ParamId, ParamSet, Tape, Var, NORM_EPS,
    TRAIN_NORM_FLOOR,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    /// token embedding width `e`
    pub embed_dim: usize,
    /// output feature dimension `d`
    pub out_dim: usize,
    pub seed: u64,
}

impl EncoderConfig {
    pub fn new(out_dim: usize) -> Self {
        Self {
            vocab_size: DEFAULT_VOCAB,
            embed_dim: 512,
            out_dim,
            seed: 0,
        }
    }
}

/// Token-embedding sum of a piece of text; the class-name half of a prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedText {
    token_sum: Vec<f64>,
    tokens: usize,
}

impl PreparedText {
    pub fn len(&self) -> usize {
        self.tokens
    }

    pub fn is_empty(&self) -> bool {
        self.tokens == 0
    }
}

/// Frozen weights bound on one tape.
#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    projection: Var,
    bias: Var,
}

/// Frozen text encoder: token lookup, mean pooling, affine projection to
/// `out_dim`, L2 normalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTextEncoder {
    config: EncoderConfig,
    tokenizer: Tokenizer,
    weights: ParamSet,
    table: ParamId,
    projection: ParamId,
    bias: ParamId,
}

impl ToyTextEncoder {
    /// Random frozen encoder. Table and projection entries are
    /// `N(0, 1/e)`; the bias starts at zero.
    pub fn new(config: EncoderConfig) -> Result<Self, EncodeError> {
        let (v, e, d) = (config.vocab_size, config.embed_dim, config.out_dim);
        if v == 0 || e == 0 || d == 0 {
            return Err(EncodeError::Alignment("encoder dimensions must be positive".into()));
        }
        let std = 1.0 / (e as f64).sqrt();
        let mut rng = SeededRng::new(config.seed);
        let mut weights = ParamSet::new();
        let table = weights.add("token_table", v, e, rng.normals(v * e, std), true)?;
        let projection = weights.add("projection", d, e, rng.normals(d * e, std), true)?;
        let bias = weights.add("bias", 1, d, vec![0.0; d], true)?;
        Ok(Self {
            tokenizer: Tokenizer::new(v),
            config,
            weights,
            table,
            projection,
            bias,
        })
    }

    /// Builds an encoder whose output for `prompts[i]` points along
    /// `anchors.row(i)`.
    ///
    /// The rows of the token table used by the prompts are moved by the
    /// smallest change that makes each prompt's pooled embedding project
    /// onto its anchor. The match is exact when `embed_dim ≥ out_dim` and a
    /// least-squares fit otherwise.
    pub fn aligned(config: EncoderConfig, prompts: &[String], anchors: &Matrix) -> Result<Self, EncodeError> {
        let mut enc = Self::new(config)?;
        if prompts.len() != anchors.rows() {
            return Err(EncodeError::Alignment(format!(
                "{} prompts for {} anchors",
                prompts.len(),
                anchors.rows()
            )));
        }
        if anchors.cols() != enc.out_dim() {
            return Err(EncodeError::DimensionMismatch {
                expected: enc.out_dim(),
                found: anchors.cols(),
            });
        }
        let targets = enc.pooled_targets(anchors)?;

        // pooling matrix over the distinct tokens of all prompts
        let tokenized = prompts
            .iter()
            .map(|p| enc.tokenizer.tokenize(p))
            .collect::<Result<Vec<_>, _>>()?;
        let mut columns = BTreeMap::new();
        for toks in &tokenized {
            for &t in toks {
                let next = columns.len();
                columns.entry(t).or_insert(next);
            }
        }
        let c = prompts.len();
        let n_tok = columns.len();
        let mut pool = Matrix::zeros(c, n_tok);
        for (i, toks) in tokenized.iter().enumerate() {
            let w = 1.0 / toks.len() as f64;
            for t in toks {
                pool.row_mut(i)[columns[t]] += w;
            }
        }

        let e = enc.embed_dim();
        let table = enc.weights.get(enc.table).to_matrix();
        let mut rows = Matrix::zeros(n_tok, e);
        for (&tok, &col) in &columns {
            rows.row_mut(col).copy_from_slice(table.row(tok));
        }
        // residual = targets − pool·rows
        let mut residual = targets;
        for i in 0..c {
            for (col, &w) in pool.row(i).iter().enumerate() {
                if w != 0.0 {
                    for (r, v) in residual.row_mut(i).iter_mut().zip(rows.row(col)) {
                        *r -= w * v;
                    }
                }
            }
        }
        let gram = pool.mul_transpose(&pool)?;
        let coeff = cholesky_solve(&gram, &residual).map_err(|_| {
            EncodeError::Alignment("prompts are not distinguishable by their tokens".into())
        })?;
        // rows += poolᵀ·coeff
        for i in 0..c {
            for (col, &w) in pool.row(i).iter().enumerate() {
                if w != 0.0 {
                    for (r, v) in rows.row_mut(col).iter_mut().zip(coeff.row(i)) {
                        *r += w * v;
                    }
                }
            }
        }
        let table_vals = enc.weights.value_mut(enc.table);
        for (&tok, &col) in &columns {
            table_vals[tok * e..(tok + 1) * e].copy_from_slice(rows.row(col));
        }
        Ok(enc)
    }

    /// Pooled embeddings `p_i` with `projection · p_i ≈ anchor_i`.
    fn pooled_targets(&self, anchors: &Matrix) -> Result<Matrix, EncodeError> {
        let proj = self.weights.get(self.projection).to_matrix();
        let (d, e) = (proj.rows(), proj.cols());
        let c = anchors.rows();
        let mut out = Matrix::zeros(c, e);
        if e >= d {
            // minimum-norm exact solution p = Pᵀ (P Pᵀ)⁻¹ a
            let gram = ridge(proj.mul_transpose(&proj)?);
            let y = cholesky_solve(&gram, &anchors.transpose())?; // d × c
            for i in 0..c {
                for j in 0..e {
                    out.row_mut(i)[j] = (0..d).map(|k| proj.row(k)[j] * y.row(k)[i]).sum();
                }
            }
        } else {
            // least squares p = (Pᵀ P)⁻¹ Pᵀ a
            let pt = proj.transpose();
            let gram = ridge(pt.mul_transpose(&pt)?);
            let rhs = pt.mul_transpose(anchors)?; // e × c
            let p = cholesky_solve(&gram, &rhs)?;
            for i in 0..c {
                for j in 0..e {
                    out.row_mut(i)[j] = p.row(j)[i];
                }
            }
        }
        Ok(out)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    pub fn out_dim(&self) -> usize {
        self.config.out_dim
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    /// The frozen weights (token table, projection, bias).
    pub fn weights(&self) -> &ParamSet {
        &self.weights
    }

    pub fn prepare(&self, text: &str) -> Result<PreparedText, EncodeError> {
        let tokens = self.tokenizer.tokenize(text)?;
        let table = self.weights.get(self.table);
        let mut token_sum = vec![0.0; self.embed_dim()];
        for t in &tokens {
            for (s, v) in token_sum.iter_mut().zip(table.row(*t)) {
                *s += v;
            }
        }
        Ok(PreparedText {
            token_sum,
            tokens: tokens.len(),
        })
    }

    pub fn bind<'a>(&self, tape: &mut Tape<'a>) -> EncoderVars {
        EncoderVars {
            projection: tape.param(&self.weights, self.projection),
            bias: tape.param(&self.weights, self.bias),
        }
    }

    /// Unnormalised output for the sequence `[prefix…, tokens(text)]`.
    fn project_on_tape(&self, tape: &mut Tape<'_>, vars: EncoderVars, prefix: &[Var], text: &PreparedText) -> Var {
        let tokens = tape.constant_vec(text.token_sum.clone());
        let total = if prefix.is_empty() {
            tokens
        } else {
            let s = tape.sum(prefix);
            tape.add(s, tokens)
        };
        let pooled = tape.scale_const(total, 1.0 / (prefix.len() + text.tokens) as f64);
        let projected = tape.matvec(vars.projection, pooled);
        tape.add(projected, vars.bias)
    }

    /// Differentiable encoding; `prefix` are already-shifted context rows.
    pub fn encode_on_tape(&self, tape: &mut Tape<'_>, vars: EncoderVars, prefix: &[Var], text: &PreparedText) -> Var {
        let raw = self.project_on_tape(tape, vars, prefix, text);
        tape.normalize(raw, TRAIN_NORM_FLOOR)
    }

    pub fn encode_text(&self, text: &str) -> Result<Vec<f64>, EncodeError> {
        let prepared = self.prepare(text)?;
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let raw = self.project_on_tape(&mut tape, vars, &[], &prepared);
        finish(tape.value(raw))
    }

    /// Encodes `[ctx_1+shift, …, ctx_M+shift, tokens(text)]`.
    pub fn encode_with_context(
        &self,
        params: &ParamSet,
        ctx: &ContextTokens,
        text: &str,
        shift: Option<&[f64]>,
    ) -> Result<Vec<f64>, EncodeError> {
        let prepared = self.prepare(text)?;
        if let Some(s) = shift {
            if s.len() != self.embed_dim() {
                return Err(EncodeError::DimensionMismatch {
                    expected: self.embed_dim(),
                    found: s.len(),
                });
            }
        }
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let rows = ctx.bind(&mut tape, params);
        let shift = shift.map(|s| tape.constant(s));
        let prefix = ContextTokens::shifted(&mut tape, &rows, shift);
        let raw = self.project_on_tape(&mut tape, vars, &prefix, &prepared);
        finish(tape.value(raw))
    }
}

fn finish(raw: &[f64]) -> Result<Vec<f64>, EncodeError> {
    let n = norm(raw);
    if !(n > NORM_EPS) {
        return Err(EncodeError::DegenerateNorm(n));
    }
    Ok(raw.iter().map(|v| v / n).collect())
}

fn ridge(mut gram: Matrix) -> Matrix {
    let n = gram.rows();
    let trace: f64 = (0..n).map(|i| gram.row(i)[i]).sum();
    let eps = 1e-10 * trace / n as f64;
    for i in 0..n {
        gram.row_mut(i)[i] += eps;
    }
    gram
}

/// An encoder handle that counts forward passes.
#[derive(Debug)]
pub struct CountedEncoder<'e> {
    inner: &'e ToyTextEncoder,
    calls: Cell<u64>,
}

impl<'e> CountedEncoder<'e> {
    pub fn new(inner: &'e ToyTextEncoder) -> Self {
        Self {
            inner,
            calls: Cell::new(0),
        }
    }

    pub fn inner(&self) -> &'e ToyTextEncoder {
        self.inner
    }

    /// Forward passes so far.
    pub fn calls(&self) -> u64 {
        self.calls.get()
    }

    fn tick(&self) {
        self.calls.set(self.calls.get() + 1);
    }

    pub fn encode_text(&self, text: &str) -> Result<Vec<f64>, EncodeError> {
        self.tick();
        self.inner.encode_text(text)
    }

    pub fn encode_with_context(
        &self,
        params: &ParamSet,
        ctx: &ContextTokens,
        text: &str,
        shift: Option<&[f64]>,
    ) -> Result<Vec<f64>, EncodeError> {
        self.tick();
        self.inner.encode_with_context(params, ctx, text, shift)
    }

    pub fn encode_on_tape(&self, tape: &mut Tape<'_>, vars: EncoderVars, prefix: &[Var], text: &PreparedText) -> Var {
        self.tick();
        self.inner.encode_on_tape(tape, vars, prefix, text)
    }
}
