use super::EncodeError;
use crate::rng::SeededRng;
use crate::tensorcore::{dot, ParamId, ParamSet, Tape, Var};

/// `M` learnable token embeddings placed in front of the class name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContextTokens {
    id: ParamId,
    len: usize,
    width: usize,
}

impl ContextTokens {
    /// Registers an `m × e` block in `params`, drawn from `N(0, std²)`.
    pub fn init(
        params: &mut ParamSet,
        m: usize,
        e: usize,
        rng: &mut SeededRng,
        std: f64,
    ) -> Result<Self, EncodeError> {
        if m == 0 {
            return Err(EncodeError::DimensionMismatch { expected: 1, found: 0 });
        }
        let id = params.add("context_tokens", m, e, rng.normals(m * e, std), false)?;
        Ok(Self { id, len: m, width: e })
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// One tape node per context row.
    pub fn bind(&self, tape: &mut Tape<'_>, params: &ParamSet) -> Vec<Var> {
        let all = tape.param(params, self.id);
        (0..self.len).map(|i| tape.row(all, i, self.width)).collect()
    }

    /// `rows[j] + shift` for every row, or the rows unchanged without a shift.
    pub fn shifted(tape: &mut Tape<'_>, rows: &[Var], shift: Option<Var>) -> Vec<Var> {
        match shift {
            None => rows.to_vec(),
            Some(s) => rows.iter().map(|&r| tape.add(r, s)).collect(),
        }
    }
}

/// Two-layer network `d → h → e` with a ReLU in between.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetaNet {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    input: usize,
    hidden: usize,
    output: usize,
}

/// Meta-network weights bound on one tape.
#[derive(Debug, Clone, Copy)]
pub struct MetaVars {
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
}

impl MetaNet {
    /// First layer `N(0, 1/d)`, second layer and both biases zero, so the
    /// initial shift is exactly zero.
    pub fn init(
        params: &mut ParamSet,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut SeededRng,
    ) -> Result<Self, EncodeError> {
        let std = 1.0 / (input as f64).sqrt();
        let w1 = params.add("meta.w1", hidden, input, rng.normals(hidden * input, std), false)?;
        let b1 = params.add("meta.b1", 1, hidden, vec![0.0; hidden], false)?;
        let w2 = params.add("meta.w2", output, hidden, vec![0.0; output * hidden], false)?;
        let b2 = params.add("meta.b2", 1, output, vec![0.0; output], false)?;
        Ok(Self {
            w1,
            b1,
            w2,
            b2,
            input,
            hidden,
            output,
        })
    }

    pub fn ids(&self) -> [ParamId; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn output_dim(&self) -> usize {
        self.output
    }

    /// `d·h + h + h·e + e`
    pub fn param_count(&self) -> usize {
        self.input * self.hidden + self.hidden + self.hidden * self.output + self.output
    }

    pub fn bind(&self, tape: &mut Tape<'_>, params: &ParamSet) -> MetaVars {
        MetaVars {
            w1: tape.param(params, self.w1),
            b1: tape.param(params, self.b1),
            w2: tape.param(params, self.w2),
            b2: tape.param(params, self.b2),
        }
    }

    pub fn forward_on_tape(&self, tape: &mut Tape<'_>, vars: MetaVars, audio: Var) -> Var {
        let h = tape.matvec(vars.w1, audio);
        let h = tape.add(h, vars.b1);
        let h = tape.relu(h);
        let o = tape.matvec(vars.w2, h);
        tape.add(o, vars.b2)
    }

    /// Plain forward pass.
    pub fn forward(&self, params: &ParamSet, audio: &[f64]) -> Result<Vec<f64>, EncodeError> {
        if audio.len() != self.input {
            return Err(EncodeError::DimensionMismatch {
                expected: self.input,
                found: audio.len(),
            });
        }
        let layer = |w: ParamId, b: ParamId, x: &[f64], cols: usize| -> Vec<f64> {
            params
                .value(w)
                .chunks_exact(cols)
                .zip(params.value(b))
                .map(|(row, bias)| dot(row, x) + bias)
                .collect()
        };
        let hidden: Vec<f64> = layer(self.w1, self.b1, audio, self.input)
            .into_iter()
            .map(|v| v.max(0.0))
            .collect();
        Ok(layer(self.w2, self.b2, &hidden, self.hidden))
    }
}
