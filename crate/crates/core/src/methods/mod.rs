//! Classification methods over a frozen audio/text embedding space.
//!
//! Every text-side method produces one feature vector per class and
//! classifies an audio embedding by cosine similarity. They differ only in
//! where the learnable state sits:
//!
//! | method            | learnable state                                   |
//! |-------------------|---------------------------------------------------|
//! | zero-shot         | none                                              |
//! | PALM              | per-class feature vectors `z_i`, mixing logits ρ  |
//! | COOP              | context tokens at the encoder input               |
//! | COCOOP            | context tokens + meta-network shift from audio    |
//! | PALM + base       | both of the above, mixed after the encoder        |
//! | linear probe      | `W`, `b` on the audio embedding; no text at all   |

mod linear;
mod objective;
mod palm;
mod prompt;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedio::{ClassSet, EmbeddingDataset};
use crate::encoders::EncodeError;
use crate::tensorcore::{argmax, cosine_sim, normalize, Matrix, NumError, NORM_EPS};

pub use linear::{train_linear_probe, LinearProbe, LinearProbeParams};
pub use objective::{cosine_loss, cosine_predict, descend, fixed_features, CosineHead};
pub use palm::{
    palm_no_context, palm_predict, palm_text_features, train_palm, train_palm_no_text, PalmHead,
    PalmNoTextHead, PalmParams, TextFeatureCache,
};
pub use prompt::{
    train_cocoop, train_coop, train_palm_plus, ClassTexts, CocoopHead, CocoopModel, CocoopParams,
    CoopHead, CoopModel, CoopParams, PalmPlusHead, PalmPlusModel, PalmPlusParams, PromptBase,
};

/// Default zero-shot prompt.
pub const DEFAULT_TEMPLATE: &str = "This is a recording of {}";
/// Class-name-only prompt used by every learning method.
pub const CLASS_NAME_TEMPLATE: &str = "{}";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MethodError {
    #[error("template must contain exactly one {{}} slot, found {0}")]
    BadTemplate(usize),
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("class {0} has no training sample")]
    MissingClass(usize),
    #[error("degenerate norm {norm:e} for class {class} text feature")]
    DegenerateFeature { class: usize, norm: f64 },
    #[error("loss became non-finite at epoch {0}")]
    Diverged(usize),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
}

/// Every method the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum MethodKind {
    ZeroShot,
    Palm,
    Coop,
    Cocoop,
    Linear,
    PalmCoop,
    PalmCocoop,
    PalmCocoopDagger,
    PalmNoText,
    PalmNoContext,
}

impl MethodKind {
    pub const ALL: [MethodKind; 10] = [
        MethodKind::ZeroShot,
        MethodKind::Palm,
        MethodKind::Coop,
        MethodKind::Cocoop,
        MethodKind::Linear,
        MethodKind::PalmCoop,
        MethodKind::PalmCocoop,
        MethodKind::PalmCocoopDagger,
        MethodKind::PalmNoText,
        MethodKind::PalmNoContext,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodKind::ZeroShot => "zeroshot",
            MethodKind::Palm => "palm",
            MethodKind::Coop => "coop",
            MethodKind::Cocoop => "cocoop",
            MethodKind::Linear => "linear",
            MethodKind::PalmCoop => "palm+coop",
            MethodKind::PalmCocoop => "palm+cocoop",
            MethodKind::PalmCocoopDagger => "palm+cocoop-dagger",
            MethodKind::PalmNoText => "palm-no-text",
            MethodKind::PalmNoContext => "palm-no-context",
        }
    }

    /// Whether the method fits anything to the few-shot set.
    pub fn trains(self) -> bool {
        !matches!(self, MethodKind::ZeroShot | MethodKind::PalmNoContext)
    }

    /// Whether the method reads the text encoder at all.
    pub fn uses_text(self) -> bool {
        !matches!(self, MethodKind::Linear | MethodKind::PalmNoText)
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MethodKind::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = MethodKind::ALL.iter().map(|m| m.as_str()).collect();
                format!("unknown method {s:?} (expected one of {})", names.join(", "))
            })
    }
}

impl TryFrom<String> for MethodKind {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<MethodKind> for String {
    fn from(m: MethodKind) -> Self {
        m.as_str().to_string()
    }
}

/// How PALM's `z_i` start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZInit {
    /// `z_i = f_T(t_i)`: the untrained model is exactly zero-shot.
    FromCache,
    /// `N(0, 1/d)` from the run seed.
    Gaussian,
}

/// Optimisation recipe shared by all trained methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub temperature: f64,
    pub seed: u64,
    pub z_init: ZInit,
    /// context tokens `M`
    pub context_len: usize,
    /// meta-network hidden width `h`
    pub meta_hidden: usize,
    pub context_init_std: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 0.05,
            temperature: 1.0,
            seed: 0,
            z_init: ZInit::FromCache,
            context_len: 16,
            meta_hidden: 64,
            context_init_std: 0.02,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), MethodError> {
        if self.epochs == 0 {
            return Err(MethodError::Config("epochs must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(MethodError::Config("lr must be > 0".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(MethodError::Config("temperature must be > 0".into()));
        }
        if self.context_len == 0 || self.meta_hidden == 0 {
            return Err(MethodError::Config("context_len and meta_hidden must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-epoch full-batch loss, recorded before each update.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub losses: Vec<f64>,
}

/// Few-shot training data: audio embeddings, their unit versions and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSet {
    audio: Vec<Vec<f64>>,
    unit: Vec<Vec<f64>>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl TrainSet {
    pub fn new(audio: Vec<Vec<f64>>, labels: Vec<usize>, num_classes: usize) -> Result<Self, MethodError> {
        if audio.is_empty() {
            return Err(MethodError::EmptyTrainSet);
        }
        if audio.len() != labels.len() {
            return Err(NumError::DimensionMismatch {
                expected: audio.len(),
                found: labels.len(),
            }
            .into());
        }
        let dim = audio[0].len();
        let mut present = vec![false; num_classes];
        for (x, &y) in audio.iter().zip(&labels) {
            if x.len() != dim {
                return Err(NumError::DimensionMismatch {
                    expected: dim,
                    found: x.len(),
                }
                .into());
            }
            if y >= num_classes {
                return Err(NumError::IndexOutOfRange {
                    index: y,
                    len: num_classes,
                }
                .into());
            }
            present[y] = true;
        }
        if let Some(missing) = present.iter().position(|p| !p) {
            return Err(MethodError::MissingClass(missing));
        }
        let unit = audio.iter().map(|x| normalize(x)).collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            audio,
            unit,
            labels,
            num_classes,
        })
    }

    /// Records `indices` of `dataset`.
    pub fn from_dataset(dataset: &EmbeddingDataset, indices: &[usize]) -> Result<Self, MethodError> {
        let recs = dataset.records();
        Self::new(
            indices.iter().map(|&i| recs[i].vector.to_vec()).collect(),
            indices.iter().map(|&i| recs[i].label).collect(),
            dataset.num_classes(),
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.audio[0].len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn audio(&self) -> &[Vec<f64>] {
        &self.audio
    }

    pub fn unit_audio(&self) -> &[Vec<f64>] {
        &self.unit
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// Substitutes each class name into the single `{}` slot of `template`.
pub fn build_class_prompts(classes: &ClassSet, template: &str) -> Result<Vec<String>, MethodError> {
    let slots = template.matches("{}").count();
    if slots != 1 {
        return Err(MethodError::BadTemplate(slots));
    }
    Ok(classes
        .names()
        .iter()
        .map(|n| template.replacen("{}", n, 1))
        .collect())
}

/// Class whose text feature is most cosine-similar to `audio`; ties go to
/// the lowest index.
pub fn zero_shot_predict(audio: &[f64], text_feats: &Matrix) -> Result<usize, MethodError> {
    let scores = text_feats
        .iter_rows()
        .map(|row| cosine_sim(audio, row))
        .collect::<Result<Vec<_>, _>>()?;
    argmax(&scores).ok_or(MethodError::Num(NumError::Empty))
}

/// Cosine similarities divided by a temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    pub scores: Vec<f64>,
    pub temperature: f64,
}

impl Logits {
    pub fn argmax(&self) -> usize {
        argmax(&self.scores).expect("non-empty logits")
    }
}

pub fn method_logits(audio: &[f64], text_feats: &Matrix, temperature: f64) -> Result<Logits, MethodError> {
    if !(temperature > 0.0) {
        return Err(MethodError::Config("temperature must be > 0".into()));
    }
    let scores = text_feats
        .iter_rows()
        .enumerate()
        .map(|(class, row)| {
            cosine_sim(audio, row)
                .map(|s| s / temperature)
                .map_err(|e| degenerate(e, class))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Logits { scores, temperature })
}

pub(crate) fn degenerate(e: NumError, class: usize) -> MethodError {
    match e {
        NumError::DegenerateNorm { norm } => MethodError::DegenerateFeature { class, norm },
        other => MethodError::Num(other),
    }
}

pub(crate) fn check_feature_norms(feats: &Matrix) -> Result<(), MethodError> {
    for (class, row) in feats.iter_rows().enumerate() {
        let n = crate::tensorcore::norm(row);
        if !(n > NORM_EPS) {
            return Err(MethodError::DegenerateFeature { class, norm: n });
        }
    }
    Ok(())
}

/// Shape inputs for [`param_count`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamShape {
    pub classes: usize,
    pub dim: usize,
    pub context_len: usize,
    pub embed_dim: usize,
    pub hidden: usize,
}

/// Learnable-parameter count of a method, broken down by group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamBreakdown {
    pub method: MethodKind,
    pub groups: Vec<(String, usize)>,
}

impl ParamBreakdown {
    pub fn total(&self) -> usize {
        self.groups.iter().map(|(_, n)| n).sum()
    }

    pub fn group(&self, name: &str) -> Option<usize> {
        self.groups.iter().find(|(g, _)| g == name).map(|(_, n)| *n)
    }
}

pub fn param_count(method: MethodKind, shape: ParamShape) -> ParamBreakdown {
    let ParamShape {
        classes: c,
        dim: d,
        context_len: m,
        embed_dim: e,
        hidden: h,
    } = shape;
    let palm = || vec![("context vectors".to_string(), c * d), ("mixing weights".to_string(), c)];
    let ctx = || ("context tokens".to_string(), m * e);
    let meta = || ("meta-net".to_string(), d * h + h + h * e + e);
    let groups = match method {
        MethodKind::ZeroShot | MethodKind::PalmNoContext => vec![],
        MethodKind::Palm => palm(),
        MethodKind::PalmNoText => vec![("context vectors".to_string(), c * d)],
        MethodKind::Coop => vec![ctx()],
        MethodKind::Cocoop => vec![ctx(), meta()],
        MethodKind::Linear => vec![("weights".to_string(), c * d), ("biases".to_string(), c)],
        MethodKind::PalmCoop => [vec![ctx()], palm()].concat(),
        MethodKind::PalmCocoop => [vec![ctx(), meta()], palm()].concat(),
        MethodKind::PalmCocoopDagger => [
            vec![ctx(), meta(), ("feature head".to_string(), e * d + d)],
            palm(),
        ]
        .concat(),
    };
    ParamBreakdown { method, groups }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classes(names: &[&str]) -> ClassSet {
        ClassSet::new(names.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn prompts_from_templates() {
        let cs = classes(&["dog", "rain"]);
        assert_eq!(build_class_prompts(&cs, "{}").unwrap(), vec!["dog", "rain"]);
        assert_eq!(
            build_class_prompts(&cs, DEFAULT_TEMPLATE).unwrap()[0],
            "This is a recording of dog"
        );
        assert_eq!(build_class_prompts(&cs, "{} and {}"), Err(MethodError::BadTemplate(2)));
        assert_eq!(build_class_prompts(&cs, "no slot"), Err(MethodError::BadTemplate(0)));
    }

    #[test]
    fn zero_shot_self_match_and_scale() {
        let feats = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.3, 0.3, 0.9]]).unwrap();
        assert_eq!(zero_shot_predict(feats.row(2), &feats).unwrap(), 2);
        let scaled: Vec<f64> = feats.row(2).iter().map(|v| 5.0 * v).collect();
        assert_eq!(zero_shot_predict(&scaled, &feats).unwrap(), 2);
        assert!(zero_shot_predict(&[0.0, 0.0, 0.0], &feats).is_err());
    }

    #[test]
    fn logits_and_temperature() {
        let feats = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let l = method_logits(&[1.0, 0.0], &feats, 1.0).unwrap();
        assert_eq!(l.scores, vec![1.0, 0.0]);
        let l2 = method_logits(&[0.6, 0.8], &feats, 0.5).unwrap();
        let l1 = method_logits(&[0.6, 0.8], &feats, 1.0).unwrap();
        for (a, b) in l2.scores.iter().zip(&l1.scores) {
            assert!((a - 2.0 * b).abs() < 1e-15);
        }
        assert_eq!(l1.argmax(), l2.argmax());

        let tiny = Matrix::from_rows(&[[1.0, 0.0], [1e-14, 0.0]]).unwrap();
        assert!(matches!(
            method_logits(&[1.0, 0.0], &tiny, 1.0),
            Err(MethodError::DegenerateFeature { class: 1, .. })
        ));
    }

    #[test]
    fn method_names_round_trip() {
        for m in MethodKind::ALL {
            assert_eq!(m.as_str().parse::<MethodKind>().unwrap(), m);
        }
        assert!("palm++".parse::<MethodKind>().is_err());
    }

    #[test]
    fn reference_parameter_counts() {
        let shape = |c, d| ParamShape {
            classes: c,
            dim: d,
            context_len: 16,
            embed_dim: 512,
            hidden: 64,
        };
        assert_eq!(param_count(MethodKind::Palm, shape(4, 3)).total(), 16);
        assert_eq!(param_count(MethodKind::Coop, shape(4, 3)).total(), 8_192);
        let cocoop = param_count(MethodKind::Cocoop, shape(10, 1024));
        assert_eq!(cocoop.group("meta-net"), Some(98_880));
        assert_eq!(cocoop.total(), 98_880 + 8_192);
        assert_eq!(param_count(MethodKind::ZeroShot, shape(4, 3)).total(), 0);
        assert_eq!(param_count(MethodKind::Linear, shape(4, 3)).total(), 16);
        assert_eq!(
            param_count(MethodKind::PalmCoop, shape(4, 3)).total(),
            16 + 8_192
        );
    }

    #[test]
    fn train_set_validation() {
        assert_eq!(TrainSet::new(vec![], vec![], 2), Err(MethodError::EmptyTrainSet));
        assert_eq!(
            TrainSet::new(vec![vec![1.0, 0.0]], vec![0], 2),
            Err(MethodError::MissingClass(1))
        );
        assert!(TrainSet::new(vec![vec![1.0, 0.0], vec![0.0, 0.0]], vec![0, 1], 2).is_err());
    }
}
