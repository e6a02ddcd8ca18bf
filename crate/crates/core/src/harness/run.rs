use std::borrow::Cow;
use std::time::Instant;

use rayon::prelude::*;

use super::{
    few_shot_sample_from, init_seed, mean, sample_seed, DatasetBundle, ExperimentConfig, HarnessError, RunResult,
    RESULTS_SCHEMA,
};
use crate::embedio::{assign_folds, EmbeddingDataset};
use crate::encoders::{CountedEncoder, EncoderConfig, ToyTextEncoder};
use crate::methods::{
    build_class_prompts, palm_no_context, palm_predict, train_cocoop, train_coop, train_linear_probe, train_palm,
    train_palm_no_text, train_palm_plus, zero_shot_predict, ClassTexts, MethodError, MethodKind, PromptBase,
    TextFeatureCache, TrainConfig, TrainSet, TrainTrace, CLASS_NAME_TEMPLATE,
};

/// One (dataset, method, seed, fold) cell.
#[derive(Debug, Clone)]
pub struct RunTask<'b> {
    pub bundle: &'b DatasetBundle,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub fold: Option<usize>,
}

/// Folds required by `cfg`: the dataset's own when the count matches,
/// otherwise a stratified assignment with seed 0.
fn resolve_folds<'b>(bundle: &'b DatasetBundle, cfg: &ExperimentConfig) -> Result<Cow<'b, DatasetBundle>, HarnessError> {
    let Some(f) = cfg.folds else {
        return Ok(Cow::Borrowed(bundle));
    };
    match bundle.dataset.num_folds() {
        Some(n) if n == f => Ok(Cow::Borrowed(bundle)),
        Some(n) => Err(HarnessError::Config(format!(
            "dataset {} has {n} folds but {f} were requested",
            bundle.id
        ))),
        None => Ok(Cow::Owned(DatasetBundle {
            dataset: assign_folds(&bundle.dataset, f, 0)?,
            ..bundle.clone()
        })),
    }
}

fn fold_list(dataset: &EmbeddingDataset, cfg: &ExperimentConfig) -> Vec<Option<usize>> {
    match (cfg.folds, dataset.num_folds()) {
        (Some(_), Some(n)) => (0..n).map(Some).collect(),
        _ => vec![None],
    }
}

/// Executes `tasks` on `jobs` threads. Output order equals input order
/// regardless of `jobs`.
pub fn run_tasks(tasks: &[RunTask<'_>], jobs: usize) -> Vec<Result<RunResult, HarnessError>> {
    let one = |t: &RunTask<'_>| run_one(t.bundle, &t.config, t.seed, t.fold);
    if jobs <= 1 {
        return tasks.iter().map(one).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(|| tasks.par_iter().map(one).collect()),
        Err(_) => tasks.iter().map(one).collect(),
    }
}

/// Every seed (× every fold under cross-validation) of one method.
pub fn run_experiment(cfg: &ExperimentConfig, bundle: &DatasetBundle, jobs: usize) -> Result<Vec<RunResult>, HarnessError> {
    cfg.validate()?;
    let bundle = resolve_folds(bundle, cfg)?;
    let folds = fold_list(&bundle.dataset, cfg);
    let tasks: Vec<RunTask<'_>> = cfg
        .seeds
        .iter()
        .flat_map(|&seed| {
            folds.iter().map(move |&fold| (seed, fold))
        })
        .map(|(seed, fold)| RunTask {
            bundle: &bundle,
            config: cfg.clone(),
            seed,
            fold,
        })
        .collect();
    run_tasks(&tasks, jobs).into_iter().collect()
}

/// Fold-averaged results.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossValidation {
    pub runs: Vec<RunResult>,
    /// `(seed, mean accuracy over folds)`
    pub per_seed: Vec<(u64, f64)>,
    pub mean: f64,
}

/// Fold `j` is the test set and all other folds form the training pool.
/// Uses the dataset's folds unless `cfg.folds` asks for a count.
pub fn cross_validate(cfg: &ExperimentConfig, bundle: &DatasetBundle, jobs: usize) -> Result<CrossValidation, HarnessError> {
    let folds = match (cfg.folds, bundle.dataset.num_folds()) {
        (Some(f), _) => f,
        (None, Some(n)) => n,
        (None, None) => return Err(HarnessError::NoFolds),
    };
    let cfg = ExperimentConfig {
        folds: Some(folds),
        ..cfg.clone()
    };
    let runs = run_experiment(&cfg, bundle, jobs)?;
    let per_seed: Vec<(u64, f64)> = cfg
        .seeds
        .iter()
        .map(|&s| {
            let accs: Vec<f64> = runs.iter().filter(|r| r.seed == s).map(|r| r.accuracy).collect();
            (s, mean(&accs).unwrap_or(0.0))
        })
        .collect();
    let seed_means: Vec<f64> = per_seed.iter().map(|p| p.1).collect();
    let mean = mean(&seed_means).unwrap_or(0.0);
    Ok(CrossValidation { runs, per_seed, mean })
}

/// Mean accuracy at one shot count.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotPoint {
    pub shots: usize,
    pub mean_accuracy: f64,
    pub results: Vec<RunResult>,
}

/// One [`run_experiment`] per entry of `shots`, sharing seeds.
pub fn shots_sweep(
    cfg: &ExperimentConfig,
    bundle: &DatasetBundle,
    shots: &[usize],
    jobs: usize,
) -> Result<Vec<ShotPoint>, HarnessError> {
    shots
        .iter()
        .map(|&k| {
            let results = run_experiment(&ExperimentConfig { shots: k, ..cfg.clone() }, bundle, jobs)?;
            let accs: Vec<f64> = results.iter().map(|r| r.accuracy).collect();
            Ok(ShotPoint {
                shots: k,
                mean_accuracy: mean(&accs).unwrap_or(0.0),
                results,
            })
        })
        .collect()
}

struct Fitted<'m> {
    predict: Box<dyn Fn(&[f64]) -> Result<usize, MethodError> + 'm>,
    trace: TrainTrace,
}

fn fit<'m>(
    method: MethodKind,
    train: Option<&TrainSet>,
    encoder: Option<&'m CountedEncoder<'m>>,
    prompts: &[String],
    tcfg: &TrainConfig,
) -> Result<Fitted<'m>, MethodError> {
    let enc = || encoder.expect("text methods have an encoder");
    let train = || train.expect("training methods have a training set");
    let texts = || ClassTexts::new(enc().inner(), prompts);
    let plus = |base| -> Result<Fitted<'m>, MethodError> {
        let (model, trace) = train_palm_plus(base, train(), enc(), &texts()?, tcfg)?;
        let e = enc();
        Ok(Fitted {
            predict: Box::new(move |x| model.predict(e, x)),
            trace,
        })
    };
    Ok(match method {
        MethodKind::ZeroShot | MethodKind::PalmNoContext => {
            let cache = TextFeatureCache::build(enc(), prompts)?;
            let feats = if method == MethodKind::ZeroShot {
                cache.base().clone()
            } else {
                palm_no_context(&cache)
            };
            Fitted {
                predict: Box::new(move |x| zero_shot_predict(x, &feats)),
                trace: TrainTrace::default(),
            }
        }
        MethodKind::Palm => {
            let cache = TextFeatureCache::build(enc(), prompts)?;
            let (params, trace) = train_palm(train(), &cache, tcfg)?;
            Fitted {
                predict: Box::new(move |x| palm_predict(x, &params, &cache)),
                trace,
            }
        }
        MethodKind::PalmNoText => {
            let (z, trace) = train_palm_no_text(train(), tcfg)?;
            Fitted {
                predict: Box::new(move |x| zero_shot_predict(x, &z)),
                trace,
            }
        }
        MethodKind::Linear => {
            let (probe, trace) = train_linear_probe(train(), tcfg)?;
            Fitted {
                predict: Box::new(move |x| probe.predict(x)),
                trace,
            }
        }
        MethodKind::Coop => {
            let (model, trace) = train_coop(train(), enc(), &texts()?, tcfg)?;
            Fitted {
                predict: Box::new(move |x| model.predict(x)),
                trace,
            }
        }
        MethodKind::Cocoop => {
            let (model, trace) = train_cocoop(train(), enc(), &texts()?, tcfg)?;
            let e = enc();
            Fitted {
                predict: Box::new(move |x| model.predict(e, x)),
                trace,
            }
        }
        MethodKind::PalmCoop => plus(PromptBase::Coop)?,
        MethodKind::PalmCocoop => plus(PromptBase::Cocoop)?,
        MethodKind::PalmCocoopDagger => plus(PromptBase::CocoopDagger)?,
    })
}

/// Samples, trains and evaluates one cell. Methods that do not train are
/// evaluated on the whole pool (or the whole test fold), so their accuracy
/// does not depend on the seed.
pub fn run_one(
    bundle: &DatasetBundle,
    cfg: &ExperimentConfig,
    seed: u64,
    fold: Option<usize>,
) -> Result<RunResult, HarnessError> {
    let start = Instant::now();
    let ds = &bundle.dataset;
    let method = cfg.method;
    let wrap = |source: MethodError| HarnessError::Method {
        method,
        dataset: bundle.id.clone(),
        seed,
        fold,
        source,
    };
    let (pool, test_fold): (Vec<usize>, Option<Vec<usize>>) = match fold {
        Some(j) => {
            if ds.num_folds().is_none() {
                return Err(HarnessError::NoFolds);
            }
            let (test, pool) = (0..ds.len()).partition(|&i| ds.fold_of(i) == Some(j));
            (pool, Some(test))
        }
        None => ((0..ds.len()).collect(), None),
    };
    let (train_idx, test_idx) = if method.trains() {
        let split = few_shot_sample_from(ds, &pool, cfg.shots, sample_seed(seed, fold))?;
        for (class, available) in &split.clamped {
            eprintln!(
                "warning: {}: class {:?} has {available} samples, fewer than {} shots; taking all",
                bundle.id,
                ds.classes().name(*class),
                cfg.shots
            );
        }
        let test = test_fold.unwrap_or(split.remainder);
        (split.train, test)
    } else {
        (Vec::new(), test_fold.unwrap_or(pool))
    };
    if test_idx.is_empty() {
        return Err(HarnessError::Config(format!(
            "{}: nothing left to evaluate after drawing {} shots per class",
            bundle.id, cfg.shots
        )));
    }

    let template = if method == MethodKind::ZeroShot {
        cfg.template.as_str()
    } else {
        CLASS_NAME_TEMPLATE
    };
    let prompts = build_class_prompts(ds.classes(), template).map_err(wrap)?;
    let encoder = if method.uses_text() {
        let enc_cfg = EncoderConfig {
            vocab_size: cfg.encoder.vocab_size,
            embed_dim: cfg.encoder.embed_dim,
            out_dim: ds.dim(),
            seed: cfg.encoder.seed,
        };
        let built = match &bundle.anchors {
            Some(a) => ToyTextEncoder::aligned(enc_cfg, &prompts, a),
            None => ToyTextEncoder::new(enc_cfg),
        };
        Some(built.map_err(|e| wrap(e.into()))?)
    } else {
        None
    };
    let counted = encoder.as_ref().map(CountedEncoder::new);
    let train = if method.trains() {
        Some(TrainSet::from_dataset(ds, &train_idx).map_err(wrap)?)
    } else {
        None
    };
    let tcfg = TrainConfig {
        epochs: cfg.epochs,
        lr: cfg.lr,
        temperature: cfg.temperature,
        seed: init_seed(seed, fold, method),
        z_init: cfg.z_init,
        context_len: cfg.context_len,
        meta_hidden: cfg.meta_hidden,
        context_init_std: cfg.context_init_std,
    };
    let fitted = fit(method, train.as_ref(), counted.as_ref(), &prompts, &tcfg).map_err(wrap)?;
    let calls = || counted.as_ref().map_or(0, |c| c.calls());
    let encoder_calls_train = calls();
    let mut correct = 0;
    for &i in &test_idx {
        let r = &ds.records()[i];
        if (fitted.predict)(&r.vector).map_err(wrap)? == r.label {
            correct += 1;
        }
    }
    let encoder_calls_eval = calls() - encoder_calls_train;
    Ok(RunResult {
        schema: RESULTS_SCHEMA,
        method,
        dataset: bundle.id.clone(),
        seed,
        fold,
        shots: cfg.shots,
        accuracy: correct as f64 / test_idx.len() as f64,
        correct,
        total: test_idx.len(),
        train_size: train_idx.len(),
        loss_trace: fitted.trace.losses,
        encoder_calls_train,
        encoder_calls_eval,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}
