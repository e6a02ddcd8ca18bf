use super::objective::{cosine_loss, descend, CosineHead};
use super::{check_feature_norms, zero_shot_predict, MethodError, TrainConfig, TrainSet, TrainTrace, ZInit};
use crate::encoders::CountedEncoder;
use crate::rng::SeededRng;
use crate::tensorcore::{sigmoid, Matrix, NumError, ParamId, ParamSet, Tape, Var};

/// Text features of the class prompts, computed once before training.
#[derive(Debug, Clone, PartialEq)]
pub struct TextFeatureCache {
    base: Matrix,
    encoder_calls: u64,
}

impl TextFeatureCache {
    /// One encoder call per prompt.
    pub fn build(encoder: &CountedEncoder<'_>, prompts: &[String]) -> Result<Self, MethodError> {
        let before = encoder.calls();
        let rows = prompts
            .iter()
            .map(|p| encoder.encode_text(p))
            .collect::<Result<Vec<_>, _>>()?;
        let base = Matrix::from_rows(&rows)?;
        Ok(Self {
            base,
            encoder_calls: encoder.calls() - before,
        })
    }

    /// Wraps precomputed features; no encoder calls are attributed.
    pub fn from_matrix(base: Matrix) -> Result<Self, MethodError> {
        check_feature_norms(&base)?;
        Ok(Self { base, encoder_calls: 0 })
    }

    pub fn base(&self) -> &Matrix {
        &self.base
    }

    pub fn num_classes(&self) -> usize {
        self.base.rows()
    }

    pub fn dim(&self) -> usize {
        self.base.cols()
    }

    /// Encoder calls spent building the cache.
    pub fn encoder_calls(&self) -> u64 {
        self.encoder_calls
    }
}

/// `(1 − λ)·f + λ·z` with `λ = σ(ρ)` and `1 − λ = σ(−ρ)`.
pub(crate) fn mix(tape: &mut Tape<'_>, f: Var, z: Var, rho: Var) -> Var {
    let lam = tape.sigmoid(rho);
    let neg = tape.scale_const(rho, -1.0);
    let keep = tape.sigmoid(neg);
    let a = tape.scale(f, keep);
    let b = tape.scale(z, lam);
    tape.add(a, b)
}

/// Learnable per-class vectors `Z` (`c × d`) and mixing logits `ρ` (`c`).
#[derive(Debug, Clone, PartialEq)]
pub struct PalmParams {
    set: ParamSet,
    z: ParamId,
    rho: ParamId,
}

impl PalmParams {
    /// `ρ = 0`, so every `λ_i` starts at one half.
    pub fn init(cache: &TextFeatureCache, z_init: ZInit, rng: &mut SeededRng) -> Result<Self, MethodError> {
        let (c, d) = (cache.num_classes(), cache.dim());
        let z0 = match z_init {
            ZInit::FromCache => cache.base().as_slice().to_vec(),
            ZInit::Gaussian => rng.normals(c * d, 1.0 / (d as f64).sqrt()),
        };
        let mut set = ParamSet::new();
        let (z, rho) = register(&mut set, z0, c, d)?;
        Ok(Self { set, z, rho })
    }

    pub fn set(&self) -> &ParamSet {
        &self.set
    }

    pub fn set_mut(&mut self) -> &mut ParamSet {
        &mut self.set
    }

    pub fn z_id(&self) -> ParamId {
        self.z
    }

    pub fn rho_id(&self) -> ParamId {
        self.rho
    }

    pub fn z(&self) -> Matrix {
        self.set.get(self.z).to_matrix()
    }

    pub fn rho(&self) -> &[f64] {
        self.set.value(self.rho)
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.rho().iter().map(|&r| sigmoid(r)).collect()
    }

    pub fn set_rho(&mut self, values: &[f64]) -> Result<(), MethodError> {
        let dst = self.set.value_mut(self.rho);
        if dst.len() != values.len() {
            return Err(NumError::DimensionMismatch {
                expected: dst.len(),
                found: values.len(),
            }
            .into());
        }
        dst.copy_from_slice(values);
        Ok(())
    }

    pub fn head<'c>(&self, cache: &'c TextFeatureCache) -> PalmHead<'c> {
        PalmHead {
            base: cache.base(),
            z: self.z,
            rho: self.rho,
        }
    }
}

pub(crate) fn register(set: &mut ParamSet, z0: Vec<f64>, c: usize, d: usize) -> Result<(ParamId, ParamId), MethodError> {
    let z = set.add("palm.z", c, d, z0, false)?;
    let rho = set.add("palm.rho", 1, c, vec![0.0; c], false)?;
    Ok((z, rho))
}

/// Cosine head mixing cached text features with `Z`.
#[derive(Debug, Clone, Copy)]
pub struct PalmHead<'c> {
    base: &'c Matrix,
    z: ParamId,
    rho: ParamId,
}

impl CosineHead for PalmHead<'_> {
    type Bound = (Var, Var, Var);

    fn bind(&self, tape: &mut Tape<'_>, params: &ParamSet) -> Self::Bound {
        let base = tape.constant_vec(self.base.as_slice().to_vec());
        (base, tape.param(params, self.z), tape.param(params, self.rho))
    }

    fn is_conditional(&self) -> bool {
        false
    }

    fn features(&self, tape: &mut Tape<'_>, bound: &Self::Bound, _audio: Option<Var>) -> Result<Vec<Var>, MethodError> {
        let (base, z, rho) = *bound;
        let d = self.base.cols();
        Ok((0..self.base.rows())
            .map(|i| {
                let f = tape.row(base, i, d);
                let zi = tape.row(z, i, d);
                let ri = tape.slice(rho, i, 1);
                mix(tape, f, zi, ri)
            })
            .collect())
    }
}

/// Mixed class features `(1 − λ_i)·f_T(t_i) + λ_i·z_i`, unnormalised.
pub fn palm_text_features(params: &PalmParams, cache: &TextFeatureCache) -> Matrix {
    let z = params.set.get(params.z);
    let mut out = cache.base().clone();
    for (i, &r) in params.rho().iter().enumerate() {
        let (keep, lam) = (sigmoid(-r), sigmoid(r));
        for (o, zv) in out.row_mut(i).iter_mut().zip(z.row(i)) {
            *o = *o * keep + zv * lam;
        }
    }
    out
}

pub fn palm_predict(audio: &[f64], params: &PalmParams, cache: &TextFeatureCache) -> Result<usize, MethodError> {
    let feats = palm_text_features(params, cache);
    check_feature_norms(&feats)?;
    zero_shot_predict(audio, &feats)
}

fn check_shapes(train: &TrainSet, c: usize, d: usize) -> Result<(), MethodError> {
    if train.num_classes() != c {
        return Err(NumError::DimensionMismatch {
            expected: c,
            found: train.num_classes(),
        }
        .into());
    }
    if train.dim() != d {
        return Err(NumError::DimensionMismatch {
            expected: d,
            found: train.dim(),
        }
        .into());
    }
    Ok(())
}

/// Trains `Z` and `ρ` against the cached features. The encoder is not an
/// input, so no encoder call can happen inside the loop.
pub fn train_palm(
    train: &TrainSet,
    cache: &TextFeatureCache,
    cfg: &TrainConfig,
) -> Result<(PalmParams, TrainTrace), MethodError> {
    cfg.validate()?;
    check_shapes(train, cache.num_classes(), cache.dim())?;
    let mut rng = SeededRng::new(cfg.seed);
    let mut params = PalmParams::init(cache, cfg.z_init, &mut rng)?;
    let head = params.head(cache);
    let trace = descend(&mut params.set, cfg, |t, s| cosine_loss(&head, t, s, train, cfg.temperature))?;
    Ok((params, trace))
}

/// Ablation with every `λ_i = 0`: the cached features as they are.
pub fn palm_no_context(cache: &TextFeatureCache) -> Matrix {
    cache.base().clone()
}

/// Cosine head over `Z` alone.
#[derive(Debug, Clone, Copy)]
pub struct PalmNoTextHead {
    z: ParamId,
    classes: usize,
    dim: usize,
}

impl PalmNoTextHead {
    pub fn new(z: ParamId, classes: usize, dim: usize) -> Self {
        Self { z, classes, dim }
    }
}

impl CosineHead for PalmNoTextHead {
    type Bound = Var;

    fn bind(&self, tape: &mut Tape<'_>, params: &ParamSet) -> Var {
        tape.param(params, self.z)
    }

    fn is_conditional(&self) -> bool {
        false
    }

    fn features(&self, tape: &mut Tape<'_>, bound: &Var, _audio: Option<Var>) -> Result<Vec<Var>, MethodError> {
        Ok((0..self.classes).map(|i| tape.row(*bound, i, self.dim)).collect())
    }
}

/// Ablation with every `λ_i = 1`: class features are `z_i` only, drawn
/// from `N(0, 1/d)` and trained. Returns the learned `Z`.
pub fn train_palm_no_text(train: &TrainSet, cfg: &TrainConfig) -> Result<(Matrix, TrainTrace), MethodError> {
    cfg.validate()?;
    let (c, d) = (train.num_classes(), train.dim());
    let mut rng = SeededRng::new(cfg.seed);
    let mut set = ParamSet::new();
    let z = set.add("palm.z", c, d, rng.normals(c * d, 1.0 / (d as f64).sqrt()), false)?;
    let head = PalmNoTextHead::new(z, c, d);
    let trace = descend(&mut set, cfg, |t, s| cosine_loss(&head, t, s, train, cfg.temperature))?;
    let feats = set.get(z).to_matrix();
    check_feature_norms(&feats)?;
    Ok((feats, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorcore::{finite_diff_check, normalize};

    fn toy() -> (TrainSet, TextFeatureCache) {
        let mut rng = SeededRng::new(3);
        let (c, d) = (3, 5);
        let base: Vec<Vec<f64>> = (0..c).map(|_| normalize(&rng.normals(d, 1.0)).unwrap()).collect();
        // audio sits away from its text feature so training has work to do
        let shift: Vec<Vec<f64>> = (0..c).map(|_| rng.normals(d, 1.0)).collect();
        let mut audio = Vec::new();
        let mut labels = Vec::new();
        for k in 0..4 {
            for y in 0..c {
                let x: Vec<f64> = (0..d)
                    .map(|j| base[y][j] + shift[y][j] + 0.2 * rng.normal() + 0.01 * k as f64)
                    .collect();
                audio.push(x);
                labels.push(y);
            }
        }
        let train = TrainSet::new(audio, labels, c).unwrap();
        let cache = TextFeatureCache::from_matrix(Matrix::from_rows(&base).unwrap()).unwrap();
        (train, cache)
    }

    #[test]
    fn untrained_from_cache_is_zero_shot() {
        let (train, cache) = toy();
        let params = PalmParams::init(&cache, ZInit::FromCache, &mut SeededRng::new(0)).unwrap();
        assert_eq!(params.lambdas(), vec![0.5; 3]);
        let feats = palm_text_features(&params, &cache);
        for (a, b) in feats.as_slice().iter().zip(cache.base().as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
        for x in train.audio() {
            assert_eq!(
                palm_predict(x, &params, &cache).unwrap(),
                zero_shot_predict(x, cache.base()).unwrap()
            );
        }
    }

    #[test]
    fn mixing_endpoints() {
        let (_, cache) = toy();
        let mut params = PalmParams::init(&cache, ZInit::Gaussian, &mut SeededRng::new(4)).unwrap();
        params.set_rho(&[-60.0; 3]).unwrap();
        let lo = palm_text_features(&params, &cache);
        for (a, b) in lo.as_slice().iter().zip(cache.base().as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        params.set_rho(&[60.0; 3]).unwrap();
        let hi = palm_text_features(&params, &cache);
        for (a, b) in hi.as_slice().iter().zip(params.z().as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(params.lambdas().iter().all(|&l| l > 0.0 && l <= 1.0));
    }

    #[test]
    fn tape_features_match_plain_features() {
        let (_, cache) = toy();
        let mut params = PalmParams::init(&cache, ZInit::Gaussian, &mut SeededRng::new(5)).unwrap();
        params.set_rho(&[0.3, -1.2, 2.0]).unwrap();
        let head = params.head(&cache);
        let feats = super::super::fixed_features(&head, params.set()).unwrap();
        assert_eq!(feats, palm_text_features(&params, &cache));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (train, cache) = toy();
        let mut params = PalmParams::init(&cache, ZInit::Gaussian, &mut SeededRng::new(6)).unwrap();
        params.set_rho(&[0.4, -0.7, 1.1]).unwrap();
        let head = params.head(&cache);
        let r = finite_diff_check(params.set(), 1e-5, |t, s| cosine_loss(&head, t, s, &train, 0.5).map_err(|_| NumError::NonFinite))
            .unwrap();
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
        assert_eq!(r.coords_checked, 3 * 5 + 3);
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let (train, cache) = toy();
        let cfg = TrainConfig {
            epochs: 30,
            lr: 0.5,
            ..TrainConfig::default()
        };
        let (p1, t1) = train_palm(&train, &cache, &cfg).unwrap();
        let (p2, t2) = train_palm(&train, &cache, &cfg).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(p1, p2);
        assert_eq!(t1.losses.len(), 30);
        assert!(t1.losses.last() < t1.losses.first());
    }

    #[test]
    fn no_text_ablation_trains() {
        let (train, _) = toy();
        let cfg = TrainConfig {
            epochs: 20,
            lr: 0.5,
            ..TrainConfig::default()
        };
        let (z, trace) = train_palm_no_text(&train, &cfg).unwrap();
        assert_eq!((z.rows(), z.cols()), (3, 5));
        assert!(trace.losses.last() < trace.losses.first());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let (train, _) = toy();
        let other = TextFeatureCache::from_matrix(Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap()).unwrap();
        assert!(train_palm(&train, &other, &TrainConfig::default()).is_err());
    }
}
