//! Few-shot protocol: sampling, multi-seed and cross-validated runs,
//! shots sweeps and result tables.

mod run;
mod sampling;
mod table;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedio::{anchors_from_dataset, load_any, DataError, EmbeddingDataset};
use crate::methods::{MethodError, MethodKind, ZInit, DEFAULT_TEMPLATE};
use crate::rng::{fnv1a64, splitmix64};
use crate::tensorcore::Matrix;

pub use crate::rng::SeededRng;
pub use run::{cross_validate, run_experiment, run_one, run_tasks, shots_sweep, CrossValidation, RunTask, ShotPoint};
pub use sampling::{few_shot_sample, few_shot_sample_from, FewShotSplit};
pub use table::{emit_table, failure_lines, BenchmarkTable, RunOutcome, TableFormat};

/// Version tag written into every results line.
pub const RESULTS_SCHEMA: u32 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("class {0:?} has no sample in the training pool")]
    EmptyClass(String),
    #[error("dataset has no fold assignment")]
    NoFolds,
    #[error("no results to tabulate")]
    EmptyResults,
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{method} failed (dataset {dataset}, seed {seed}{}): {source}", fold_suffix(*.fold))]
    Method {
        method: MethodKind,
        dataset: String,
        seed: u64,
        fold: Option<usize>,
        source: MethodError,
    },
}

fn fold_suffix(fold: Option<usize>) -> String {
    fold.map(|f| format!(", fold {f}")).unwrap_or_default()
}

/// Toy text encoder settings; its output width always equals the dataset's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSettings {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub seed: u64,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        Self {
            vocab_size: crate::encoders::DEFAULT_VOCAB,
            embed_dim: 512,
            seed: 0,
        }
    }
}

/// Full recipe for one benchmark cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub method: MethodKind,
    pub shots: usize,
    pub epochs: usize,
    pub lr: f64,
    pub temperature: f64,
    pub seeds: Vec<u64>,
    /// `None` is train/test mode: train on the few-shot draw, test on the
    /// rest. `Some(F)` cross-validates over `F` folds.
    pub folds: Option<usize>,
    /// Zero-shot prompt template. Learning methods use class names only.
    pub template: String,
    pub z_init: ZInit,
    pub context_len: usize,
    pub meta_hidden: usize,
    pub context_init_std: f64,
    pub encoder: EncoderSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: MethodKind::Palm,
            shots: 16,
            epochs: 50,
            lr: 0.05,
            temperature: 1.0,
            seeds: vec![0, 1, 2],
            folds: None,
            template: DEFAULT_TEMPLATE.to_string(),
            z_init: ZInit::FromCache,
            context_len: 16,
            meta_hidden: 64,
            context_init_std: 0.02,
            encoder: EncoderSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.shots == 0 {
            return bad("shots must be >= 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be > 0");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be > 0");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if matches!(self.folds, Some(f) if f < 2) {
            return bad("folds must be >= 2");
        }
        if self.template.matches("{}").count() != 1 {
            return bad("template must contain exactly one {} slot");
        }
        if self.context_len == 0 || self.meta_hidden == 0 || self.encoder.embed_dim == 0 || self.encoder.vocab_size == 0 {
            return bad("context length, hidden width, embed dim and vocabulary must be >= 1");
        }
        Ok(())
    }

    pub fn with_method(&self, method: MethodKind) -> Self {
        Self {
            method,
            ..self.clone()
        }
    }
}

/// Seed for the few-shot draw of one (seed, fold) cell. Every method sees
/// the same draw, so methods are compared on identical data.
pub fn sample_seed(seed: u64, fold: Option<usize>) -> u64 {
    let f = fold.map_or(u64::MAX, |f| f as u64);
    splitmix64(seed ^ splitmix64(f))
}

/// Seed for a method's parameter initialisation.
pub fn init_seed(seed: u64, fold: Option<usize>, method: MethodKind) -> u64 {
    splitmix64(sample_seed(seed, fold) ^ fnv1a64(method.as_str().as_bytes()))
}

/// An evaluation dataset with its optional per-class text anchors.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub id: String,
    pub dataset: EmbeddingDataset,
    /// `c × d` text-side targets for the toy encoder. Without them the
    /// encoder is random and text features carry no class information.
    pub anchors: Option<Matrix>,
}

impl DatasetBundle {
    pub fn new(id: impl Into<String>, dataset: EmbeddingDataset, anchors: Option<Matrix>) -> Result<Self, HarnessError> {
        if let Some(a) = &anchors {
            if a.rows() != dataset.num_classes() || a.cols() != dataset.dim() {
                return Err(DataError::Invalid(format!(
                    "anchors are {}x{}, dataset needs {}x{}",
                    a.rows(),
                    a.cols(),
                    dataset.num_classes(),
                    dataset.dim()
                ))
                .into());
            }
        }
        Ok(Self {
            id: id.into(),
            dataset,
            anchors,
        })
    }

    /// Loads a dataset file and, if given, an anchors file with the same
    /// class list.
    pub fn load(path: &std::path::Path, anchors: Option<&std::path::Path>) -> Result<Self, HarnessError> {
        let dataset = load_any(path)?;
        let anchors = match anchors {
            Some(p) => Some(anchors_from_dataset(&load_any(p)?, dataset.classes())?),
            None => None,
        };
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        Self::new(id, dataset, anchors)
    }
}

/// One completed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub schema: u32,
    pub method: MethodKind,
    pub dataset: String,
    pub seed: u64,
    pub fold: Option<usize>,
    pub shots: usize,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub train_size: usize,
    /// Full-batch loss before each update.
    pub loss_trace: Vec<f64>,
    /// Encoder forward passes while building features and training.
    pub encoder_calls_train: u64,
    /// Encoder forward passes while predicting the test set.
    pub encoder_calls_eval: u64,
    /// Not persisted: results files must be byte-identical across runs.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl RunResult {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("run results always serialise")
    }
}

/// Arithmetic mean; `None` for an empty slice.
pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}
