use super::{check_feature_norms, zero_shot_predict, MethodError, TrainConfig, TrainSet, TrainTrace};
use crate::tensorcore::{normalize, sgd_step, Matrix, ParamSet, Tape, Var, TRAIN_NORM_FLOOR};

/// The text side of a cosine classifier: produces one feature per class,
/// optionally conditioned on the audio sample.
pub trait CosineHead {
    type Bound;

    fn bind(&self, tape: &mut Tape<'_>, params: &ParamSet) -> Self::Bound;

    /// Whether [`CosineHead::features`] reads the audio node.
    fn is_conditional(&self) -> bool;

    /// Unnormalised class features. `audio` is the unit audio node; it is
    /// `None` only for unconditional heads.
    fn features(&self, tape: &mut Tape<'_>, bound: &Self::Bound, audio: Option<Var>) -> Result<Vec<Var>, MethodError>;
}

fn stack_unit(tape: &mut Tape<'_>, rows: &[Var]) -> Var {
    let unit: Vec<Var> = rows.iter().map(|&r| tape.normalize(r, TRAIN_NORM_FLOOR)).collect();
    tape.concat(&unit)
}

/// Mean cross-entropy of `cos(x, f_i) / τ` logits over the whole set.
pub fn cosine_loss<'a, H: CosineHead>(
    head: &H,
    tape: &mut Tape<'a>,
    params: &ParamSet,
    train: &'a TrainSet,
    temperature: f64,
) -> Result<Var, MethodError> {
    let bound = head.bind(tape, params);
    let shared = if head.is_conditional() {
        None
    } else {
        let rows = head.features(tape, &bound, None)?;
        Some(stack_unit(tape, &rows))
    };
    let mut losses = Vec::with_capacity(train.len());
    for (x, &y) in train.unit_audio().iter().zip(train.labels()) {
        let xv = tape.constant(x);
        let feats = match shared {
            Some(f) => f,
            None => {
                let rows = head.features(tape, &bound, Some(xv))?;
                stack_unit(tape, &rows)
            }
        };
        let logits = tape.matvec(feats, xv);
        let logits = tape.scale_const(logits, 1.0 / temperature);
        losses.push(tape.softmax_cross_entropy(logits, y)?);
    }
    Ok(tape.mean(&losses))
}

/// Full-batch gradient descent on `params` for `cfg.epochs` epochs.
pub fn descend<'a, F>(params: &mut ParamSet, cfg: &TrainConfig, mut loss: F) -> Result<TrainTrace, MethodError>
where
    F: FnMut(&mut Tape<'a>, &ParamSet) -> Result<Var, MethodError>,
{
    let mut trace = TrainTrace::default();
    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let root = loss(&mut tape, params)?;
        let value = tape.scalar(root);
        if !value.is_finite() {
            return Err(MethodError::Diverged(epoch));
        }
        let grads = tape.backward(root);
        params.accumulate(&grads);
        sgd_step(params, cfg.lr);
        if !params.all_finite() {
            return Err(MethodError::Diverged(epoch));
        }
        trace.losses.push(value);
    }
    Ok(trace)
}

/// Class features of an unconditional head.
pub fn fixed_features<H: CosineHead>(head: &H, params: &ParamSet) -> Result<Matrix, MethodError> {
    assert!(!head.is_conditional(), "fixed_features on a conditional head");
    let mut tape = Tape::new();
    let bound = head.bind(&mut tape, params);
    let rows = head.features(&mut tape, &bound, None)?;
    let feats = Matrix::from_rows(&rows.iter().map(|&r| tape.value(r)).collect::<Vec<_>>())?;
    check_feature_norms(&feats)?;
    Ok(feats)
}

/// Prediction for one audio embedding; features are rebuilt for the
/// sample when the head is conditional.
pub fn cosine_predict<H: CosineHead>(head: &H, params: &ParamSet, audio: &[f64]) -> Result<usize, MethodError> {
    let unit = normalize(audio)?;
    let mut tape = Tape::new();
    let bound = head.bind(&mut tape, params);
    let x = tape.constant(&unit);
    let rows = head.features(&mut tape, &bound, head.is_conditional().then_some(x))?;
    let feats = Matrix::from_rows(&rows.iter().map(|&r| tape.value(r)).collect::<Vec<_>>())?;
    check_feature_norms(&feats)?;
    zero_shot_predict(audio, &feats)
}
