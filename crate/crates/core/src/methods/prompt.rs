use super::objective::{cosine_loss, cosine_predict, descend, fixed_features, CosineHead};
use super::palm::{mix, register};
use super::{zero_shot_predict, MethodError, TrainConfig, TrainSet, TrainTrace};
use crate::encoders::{ContextTokens, CountedEncoder, EncoderVars, MetaNet, MetaVars, PreparedText, ToyTextEncoder};
use crate::rng::SeededRng;
use crate::tensorcore::{sigmoid, Matrix, NumError, ParamId, ParamSet, Tape, Var};

/// Class prompts tokenised once; no encoder call is involved.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassTexts {
    prompts: Vec<String>,
    prepared: Vec<PreparedText>,
}

impl ClassTexts {
    pub fn new(encoder: &ToyTextEncoder, prompts: &[String]) -> Result<Self, MethodError> {
        let prepared = prompts
            .iter()
            .map(|p| encoder.prepare(p))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            prompts: prompts.to_vec(),
            prepared,
        })
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn prompts(&self) -> &[String] {
        &self.prompts
    }
}

fn check_classes(train: &TrainSet, texts: &ClassTexts, encoder: &CountedEncoder<'_>) -> Result<(), MethodError> {
    if texts.len() != train.num_classes() {
        return Err(NumError::DimensionMismatch {
            expected: train.num_classes(),
            found: texts.len(),
        }
        .into());
    }
    if encoder.inner().out_dim() != train.dim() {
        return Err(NumError::DimensionMismatch {
            expected: train.dim(),
            found: encoder.inner().out_dim(),
        }
        .into());
    }
    Ok(())
}

fn encode_all(
    tape: &mut Tape<'_>,
    encoder: &CountedEncoder<'_>,
    vars: EncoderVars,
    prefix: &[Var],
    texts: &ClassTexts,
) -> Vec<Var> {
    texts
        .prepared
        .iter()
        .map(|p| encoder.encode_on_tape(tape, vars, prefix, p))
        .collect()
}

/// Learnable context tokens shared by all classes.
#[derive(Debug, Clone, PartialEq)]
pub struct CoopParams {
    set: ParamSet,
    ctx: ContextTokens,
}

impl CoopParams {
    pub fn set(&self) -> &ParamSet {
        &self.set
    }

    pub fn context(&self) -> ContextTokens {
        self.ctx
    }
}

/// Encoder output for `[ctx…, class prompt]`.
#[derive(Debug, Clone, Copy)]
pub struct CoopHead<'h, 'e> {
    pub encoder: &'h CountedEncoder<'e>,
    pub texts: &'h ClassTexts,
    pub ctx: ContextTokens,
}

impl CosineHead for CoopHead<'_, '_> {
    type Bound = (EncoderVars, Vec<Var>);

    fn bind(&self, tape: &mut Tape<'_>, params: &ParamSet) -> Self::Bound {
        (self.encoder.inner().bind(tape), self.ctx.bind(tape, params))
    }

    fn is_conditional(&self) -> bool {
        false
    }

    fn features(&self, tape: &mut Tape<'_>, bound: &Self::Bound, _audio: Option<Var>) -> Result<Vec<Var>, MethodError> {
        Ok(encode_all(tape, self.encoder, bound.0, &bound.1, self.texts))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoopModel {
    pub params: CoopParams,
    /// Class features after training.
    pub text_features: Matrix,
}

impl CoopModel {
    pub fn predict(&self, audio: &[f64]) -> Result<usize, MethodError> {
        zero_shot_predict(audio, &self.text_features)
    }
}

/// `c` encoder calls per epoch, plus `c` for the final features.
pub fn train_coop(
    train: &TrainSet,
    encoder: &CountedEncoder<'_>,
    texts: &ClassTexts,
    cfg: &TrainConfig,
) -> Result<(CoopModel, TrainTrace), MethodError> {
    cfg.validate()?;
    check_classes(train, texts, encoder)?;
    let mut rng = SeededRng::new(cfg.seed);
    let mut set = ParamSet::new();
    let e = encoder.inner().embed_dim();
    let ctx = ContextTokens::init(&mut set, cfg.context_len, e, &mut rng, cfg.context_init_std)?;
    let head = CoopHead { encoder, texts, ctx };
    let trace = descend(&mut set, cfg, |t, s| cosine_loss(&head, t, s, train, cfg.temperature))?;
    let text_features = fixed_features(&head, &set)?;
    Ok((
        CoopModel {
            params: CoopParams { set, ctx },
            text_features,
        },
        trace,
    ))
}

/// Context tokens plus a meta-network mapping audio to a token shift.
#[derive(Debug, Clone, PartialEq)]
pub struct CocoopParams {
    set: ParamSet,
    ctx: ContextTokens,
    meta: MetaNet,
}

impl CocoopParams {
    pub fn set(&self) -> &ParamSet {
        &self.set
    }

    pub fn context(&self) -> ContextTokens {
        self.ctx
    }

    pub fn meta(&self) -> MetaNet {
        self.meta
    }
}

/// Encoder output for `[ctx… + π(x), class prompt]`.
#[derive(Debug, Clone, Copy)]
pub struct CocoopHead<'h, 'e> {
    pub encoder: &'h CountedEncoder<'e>,
    pub texts: &'h ClassTexts,
    pub ctx: ContextTokens,
    pub meta: MetaNet,
}

impl CosineHead for CocoopHead<'_, '_> {
    type Bound = (EncoderVars, Vec<Var>, MetaVars);

    fn bind(&self, tape: &mut Tape<'_>, params: &ParamSet) -> Self::Bound {
        (
            self.encoder.inner().bind(tape),
            self.ctx.bind(tape, params),
            self.meta.bind(tape, params),
        )
    }

    fn is_conditional(&self) -> bool {
        true
    }

    fn features(&self, tape: &mut Tape<'_>, bound: &Self::Bound, audio: Option<Var>) -> Result<Vec<Var>, MethodError> {
        let x = audio.expect("conditional head needs audio");
        let shift = self.meta.forward_on_tape(tape, bound.2, x);
        let prefix = ContextTokens::shifted(tape, &bound.1, Some(shift));
        Ok(encode_all(tape, self.encoder, bound.0, &prefix, self.texts))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CocoopModel {
    pub params: CocoopParams,
    pub texts: ClassTexts,
}

impl CocoopModel {
    pub fn head<'h, 'e>(&'h self, encoder: &'h CountedEncoder<'e>) -> CocoopHead<'h, 'e> {
        CocoopHead {
            encoder,
            texts: &self.texts,
            ctx: self.params.ctx,
            meta: self.params.meta,
        }
    }

    /// `c` encoder calls per prediction.
    pub fn predict(&self, encoder: &CountedEncoder<'_>, audio: &[f64]) -> Result<usize, MethodError> {
        cosine_predict(&self.head(encoder), &self.params.set, audio)
    }
}

/// `c` encoder calls per training sample per epoch.
pub fn train_cocoop(
    train: &TrainSet,
    encoder: &CountedEncoder<'_>,
    texts: &ClassTexts,
    cfg: &TrainConfig,
) -> Result<(CocoopModel, TrainTrace), MethodError> {
    cfg.validate()?;
    check_classes(train, texts, encoder)?;
    let mut rng = SeededRng::new(cfg.seed);
    let mut set = ParamSet::new();
    let e = encoder.inner().embed_dim();
    let ctx = ContextTokens::init(&mut set, cfg.context_len, e, &mut rng, cfg.context_init_std)?;
    let meta = MetaNet::init(&mut set, train.dim(), cfg.meta_hidden, e, &mut rng)?;
    let head = CocoopHead {
        encoder,
        texts,
        ctx,
        meta,
    };
    let trace = descend(&mut set, cfg, |t, s| cosine_loss(&head, t, s, train, cfg.temperature))?;
    Ok((
        CocoopModel {
            params: CocoopParams { set, ctx, meta },
            texts: texts.clone(),
        },
        trace,
    ))
}

/// Prompt learner combined with PALM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptBase {
    Coop,
    Cocoop,
    /// COCOOP with the meta-network shift applied to the encoder output
    /// through a learnable `e → d` head instead of to the input tokens.
    CocoopDagger,
}

/// Joint state: context tokens, optional meta-network and feature head,
/// and PALM's `Z`, `ρ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PalmPlusParams {
    set: ParamSet,
    layout: Layout,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Layout {
    base: PromptBase,
    ctx: ContextTokens,
    meta: Option<MetaNet>,
    /// `(W: d × e, b: d)`
    feature_head: Option<(ParamId, ParamId)>,
    z: ParamId,
    rho: ParamId,
    classes: usize,
    dim: usize,
}

impl PalmPlusParams {
    pub fn set(&self) -> &ParamSet {
        &self.set
    }

    pub fn base(&self) -> PromptBase {
        self.layout.base
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.set.value(self.layout.rho).iter().map(|&r| sigmoid(r)).collect()
    }

    pub fn context(&self) -> ContextTokens {
        self.layout.ctx
    }

    pub fn meta(&self) -> Option<MetaNet> {
        self.layout.meta
    }

    pub fn z(&self) -> Matrix {
        self.set.get(self.layout.z).to_matrix()
    }

    pub fn rho(&self) -> &[f64] {
        self.set.value(self.layout.rho)
    }

    /// `(W, b)` of the post-encoder head, present for [`PromptBase::CocoopDagger`].
    pub fn feature_head(&self) -> Option<(Matrix, Vec<f64>)> {
        self.layout
            .feature_head
            .map(|(w, b)| (self.set.get(w).to_matrix(), self.set.value(b).to_vec()))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PalmPlusHead<'h, 'e> {
    encoder: &'h CountedEncoder<'e>,
    texts: &'h ClassTexts,
    layout: Layout,
}

pub struct PalmPlusVars {
    enc: EncoderVars,
    ctx: Vec<Var>,
    meta: Option<MetaVars>,
    feature_head: Option<(Var, Var)>,
    z: Var,
    rho: Var,
}

impl CosineHead for PalmPlusHead<'_, '_> {
    type Bound = PalmPlusVars;

    fn bind(&self, tape: &mut Tape<'_>, params: &ParamSet) -> PalmPlusVars {
        let l = &self.layout;
        PalmPlusVars {
            enc: self.encoder.inner().bind(tape),
            ctx: l.ctx.bind(tape, params),
            meta: l.meta.map(|m| m.bind(tape, params)),
            feature_head: l
                .feature_head
                .map(|(w, b)| (tape.param(params, w), tape.param(params, b))),
            z: tape.param(params, l.z),
            rho: tape.param(params, l.rho),
        }
    }

    fn is_conditional(&self) -> bool {
        self.layout.base != PromptBase::Coop
    }

    fn features(&self, tape: &mut Tape<'_>, v: &PalmPlusVars, audio: Option<Var>) -> Result<Vec<Var>, MethodError> {
        let l = &self.layout;
        let base = match l.base {
            PromptBase::Coop => encode_all(tape, self.encoder, v.enc, &v.ctx, self.texts),
            PromptBase::Cocoop => {
                let x = audio.expect("conditional head needs audio");
                let meta = l.meta.expect("meta-net");
                let shift = meta.forward_on_tape(tape, v.meta.expect("meta vars"), x);
                let prefix = ContextTokens::shifted(tape, &v.ctx, Some(shift));
                encode_all(tape, self.encoder, v.enc, &prefix, self.texts)
            }
            PromptBase::CocoopDagger => {
                let x = audio.expect("conditional head needs audio");
                let meta = l.meta.expect("meta-net");
                let pi = meta.forward_on_tape(tape, v.meta.expect("meta vars"), x);
                let (w, b) = v.feature_head.expect("feature head");
                let delta = tape.matvec(w, pi);
                let delta = tape.add(delta, b);
                encode_all(tape, self.encoder, v.enc, &v.ctx, self.texts)
                    .into_iter()
                    .map(|f| tape.add(f, delta))
                    .collect()
            }
        };
        Ok(base
            .into_iter()
            .enumerate()
            .map(|(i, f)| {
                let zi = tape.row(v.z, i, l.dim);
                let ri = tape.slice(v.rho, i, 1);
                mix(tape, f, zi, ri)
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PalmPlusModel {
    pub params: PalmPlusParams,
    pub texts: ClassTexts,
    /// Class features for the unconditional (COOP) base.
    pub text_features: Option<Matrix>,
}

impl PalmPlusModel {
    pub fn head<'h, 'e>(&'h self, encoder: &'h CountedEncoder<'e>) -> PalmPlusHead<'h, 'e> {
        PalmPlusHead {
            encoder,
            texts: &self.texts,
            layout: self.params.layout,
        }
    }

    pub fn predict(&self, encoder: &CountedEncoder<'_>, audio: &[f64]) -> Result<usize, MethodError> {
        match &self.text_features {
            Some(f) => zero_shot_predict(audio, f),
            None => cosine_predict(&self.head(encoder), &self.params.set, audio),
        }
    }
}

/// `Z` starts at the base learner's initial class features (`c` encoder
/// calls), so the untrained joint model equals the untrained base.
pub fn train_palm_plus(
    base: PromptBase,
    train: &TrainSet,
    encoder: &CountedEncoder<'_>,
    texts: &ClassTexts,
    cfg: &TrainConfig,
) -> Result<(PalmPlusModel, TrainTrace), MethodError> {
    cfg.validate()?;
    check_classes(train, texts, encoder)?;
    let (c, d) = (train.num_classes(), train.dim());
    let e = encoder.inner().embed_dim();
    let mut rng = SeededRng::new(cfg.seed);
    let mut set = ParamSet::new();
    let ctx = ContextTokens::init(&mut set, cfg.context_len, e, &mut rng, cfg.context_init_std)?;
    let meta = match base {
        PromptBase::Coop => None,
        _ => Some(MetaNet::init(&mut set, d, cfg.meta_hidden, e, &mut rng)?),
    };
    let feature_head = match base {
        PromptBase::CocoopDagger => {
            let w = set.add("head.w", d, e, rng.normals(d * e, 1.0 / (e as f64).sqrt()), false)?;
            let b = set.add("head.b", 1, d, vec![0.0; d], false)?;
            Some((w, b))
        }
        _ => None,
    };
    let z0 = texts
        .prompts()
        .iter()
        .map(|p| encoder.encode_with_context(&set, &ctx, p, None))
        .collect::<Result<Vec<_>, _>>()?
        .concat();
    let (z, rho) = register(&mut set, z0, c, d)?;
    let layout = Layout {
        base,
        ctx,
        meta,
        feature_head,
        z,
        rho,
        classes: c,
        dim: d,
    };
    let head = PalmPlusHead {
        encoder,
        texts,
        layout,
    };
    let trace = descend(&mut set, cfg, |t, s| cosine_loss(&head, t, s, train, cfg.temperature))?;
    let text_features = if head.is_conditional() {
        None
    } else {
        Some(fixed_features(&head, &set)?)
    };
    Ok((
        PalmPlusModel {
            params: PalmPlusParams { set, layout },
            texts: texts.clone(),
            text_features,
        },
        trace,
    ))
}
