use super::objective::descend;
use super::{MethodError, TrainConfig, TrainSet, TrainTrace};
use crate::tensorcore::{argmax, Matrix, NumError, ParamId, ParamSet, Tape, Var};

/// Weights `W` (`c × d`) and biases `b` (`c`) on the raw audio embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbeParams {
    set: ParamSet,
    w: ParamId,
    b: ParamId,
}

impl LinearProbeParams {
    /// All zeros: the untrained probe is uniform over classes.
    pub fn zeros(classes: usize, dim: usize) -> Result<Self, MethodError> {
        let mut set = ParamSet::new();
        let w = set.add("probe.w", classes, dim, vec![0.0; classes * dim], false)?;
        let b = set.add("probe.b", 1, classes, vec![0.0; classes], false)?;
        Ok(Self { set, w, b })
    }

    pub fn set(&self) -> &ParamSet {
        &self.set
    }

    /// Mean cross-entropy of `W x + b`.
    pub fn loss<'a>(&self, tape: &mut Tape<'a>, params: &ParamSet, train: &'a TrainSet) -> Result<Var, MethodError> {
        let w = tape.param(params, self.w);
        let b = tape.param(params, self.b);
        let mut losses = Vec::with_capacity(train.len());
        for (x, &y) in train.audio().iter().zip(train.labels()) {
            let xv = tape.constant(x);
            let logits = tape.matvec(w, xv);
            let logits = tape.add(logits, b);
            losses.push(tape.softmax_cross_entropy(logits, y)?);
        }
        Ok(tape.mean(&losses))
    }
}

/// Trained probe.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl LinearProbe {
    pub fn predict(&self, audio: &[f64]) -> Result<usize, MethodError> {
        let mut scores = self.weights.matvec(audio)?;
        scores.iter_mut().zip(&self.bias).for_each(|(s, b)| *s += b);
        argmax(&scores).ok_or(MethodError::Num(NumError::Empty))
    }
}

pub fn train_linear_probe(train: &TrainSet, cfg: &TrainConfig) -> Result<(LinearProbe, TrainTrace), MethodError> {
    cfg.validate()?;
    let mut params = LinearProbeParams::zeros(train.num_classes(), train.dim())?;
    let layout = LinearProbeParams {
        set: ParamSet::new(),
        ..params
    };
    let trace = descend(&mut params.set, cfg, |t, s| layout.loss(t, s, train))?;
    Ok((
        LinearProbe {
            weights: params.set.get(params.w).to_matrix(),
            bias: params.set.value(params.b).to_vec(),
        },
        trace,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorcore::finite_diff_check;

    fn data() -> TrainSet {
        TrainSet::new(
            vec![vec![1.0, 0.2], vec![0.9, -0.1], vec![-0.2, 1.0], vec![0.1, 0.8]],
            vec![0, 0, 1, 1],
            2,
        )
        .unwrap()
    }

    #[test]
    fn initial_loss_is_log_classes() {
        let train = data();
        let (probe, trace) = train_linear_probe(&train, &TrainConfig { epochs: 40, lr: 0.5, ..TrainConfig::default() }).unwrap();
        assert!((trace.losses[0] - 2f64.ln()).abs() < 1e-12);
        assert!(trace.losses.last() < trace.losses.first());
        for (x, &y) in train.audio().iter().zip(train.labels()) {
            assert_eq!(probe.predict(x).unwrap(), y);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let train = data();
        let mut p = LinearProbeParams::zeros(2, 2).unwrap();
        p.set.value_mut(p.w).copy_from_slice(&[0.3, -0.2, 0.5, 0.1]);
        let r = finite_diff_check(p.set(), 1e-5, |t, s| p.loss(t, s, &train).map_err(|_| NumError::NonFinite)).unwrap();
        assert!(r.max_rel_error <= 1e-6, "{r:?}");
        assert_eq!(r.coords_checked, 6);
    }
}
