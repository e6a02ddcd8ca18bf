//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs under `cargo test` with `harness = false`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use palmlab::embedio::{generate_synthetic, save_as, FileFormat, SyntheticSpec};
use palmlab::encoders::{CountedEncoder, EncoderConfig, ToyTextEncoder};
use palmlab::harness::{run_experiment, shots_sweep, DatasetBundle, EncoderSettings, ExperimentConfig, RunResult};
use palmlab::methods::*;
use palmlab::tensorcore::ParamSet;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn committed() -> DatasetBundle {
    let (ds, anchors) = generate_synthetic(&SyntheticSpec::default()).unwrap();
    DatasetBundle::new("synthetic", ds, Some(anchors)).unwrap()
}

fn small_bundle() -> DatasetBundle {
    let spec = SyntheticSpec {
        classes: 3,
        dim: 8,
        samples_per_class: 10,
        ..SyntheticSpec::default()
    };
    let (ds, anchors) = generate_synthetic(&spec).unwrap();
    DatasetBundle::new("small", ds, Some(anchors)).unwrap()
}

fn small_config(method: MethodKind) -> ExperimentConfig {
    ExperimentConfig {
        method,
        shots: 2,
        epochs: 3,
        context_len: 2,
        meta_hidden: 4,
        encoder: EncoderSettings {
            embed_dim: 8,
            ..EncoderSettings::default()
        },
        ..ExperimentConfig::default()
    }
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let per_method = 16;
    let mut worst = (0.0f64, String::new());
    let mut cases = 0;
    for (m, &method) in common::GRADIENT_METHODS.iter().enumerate() {
        for i in 0..per_method {
            let seed = 1000 * m as u64 + i;
            let (r, _) = common::gradient_case(method, seed);
            cases += 1;
            if !(r.max_rel_error <= worst.0) {
                worst = (r.max_rel_error, format!("{method} seed {seed}"));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(cases >= 100, format!("only {cases} cases"))?;
    ensure(worst.0 <= 1e-4, format!("max relative error {:.3e} at {}", worst.0, worst.1))?;
    ensure(secs < 30.0, format!("took {secs:.1}s"))?;
    Ok(format!("{cases} cases, max relative error {:.2e} ({}), {secs:.1}s", worst.0, worst.1))
}

fn zero_shot_reduction() -> Outcome {
    let bundle = committed();
    let ds = &bundle.dataset;
    let prompts = build_class_prompts(ds.classes(), CLASS_NAME_TEMPLATE).unwrap();
    let cfg = EncoderConfig::new(ds.dim());
    let enc = ToyTextEncoder::aligned(cfg, &prompts, bundle.anchors.as_ref().unwrap()).unwrap();
    let mut checked = 0;
    let mut check = |enc: &ToyTextEncoder, prompts: &[String], inputs: &[&[f64]]| -> Result<(), String> {
        let counted = CountedEncoder::new(enc);
        let cache = TextFeatureCache::build(&counted, prompts).unwrap();
        let mut rng = palmlab::rng::SeededRng::new(0);
        let params = PalmParams::init(&cache, ZInit::FromCache, &mut rng).unwrap();
        for x in inputs {
            checked += 1;
            let a = palm_predict(x, &params, &cache).unwrap();
            let b = zero_shot_predict(x, cache.base()).unwrap();
            ensure(a == b, format!("input {checked}: palm {a} vs zero-shot {b}"))?;
        }
        Ok(())
    };
    let inputs: Vec<&[f64]> = ds.records().iter().map(|r| r.vector.as_slice()).collect();
    check(&enc, &prompts, &inputs)?;
    for seed in 0..50 {
        let inst = common::instance(seed);
        let xs: Vec<&[f64]> = inst.train.audio().iter().map(|v| v.as_slice()).chain(inst.test.iter().map(|v| v.as_slice())).collect();
        check(&inst.encoder, &inst.prompts, &xs)?;
    }
    Ok(format!("{checked} inputs, all equal"))
}

fn efficiency() -> Outcome {
    let bundle = small_bundle();
    let c = bundle.dataset.num_classes() as u64;
    let mut notes = Vec::new();
    for (epochs, shots) in [(3usize, 2usize), (5, 3)] {
        let run = |m| {
            let cfg = ExperimentConfig {
                epochs,
                shots,
                seeds: vec![0],
                ..small_config(m)
            };
            run_experiment(&cfg, &bundle, 1).unwrap().remove(0)
        };
        let e = epochs as u64;
        let n = c * shots as u64;
        let palm = run(MethodKind::Palm).encoder_calls_train;
        let coop = run(MethodKind::Coop).encoder_calls_train;
        let cocoop = run(MethodKind::Cocoop).encoder_calls_train;
        ensure(palm == c, format!("palm {palm} != c = {c}"))?;
        ensure(coop >= c * e, format!("coop {coop} < c·E = {}", c * e))?;
        ensure(cocoop >= c * n * e, format!("cocoop {cocoop} < c·N·E = {}", c * n * e))?;
        notes.push(format!("E={e} N={n}: palm {palm}, coop {coop}, cocoop {cocoop}"));
    }
    let full = run_experiment(&ExperimentConfig::default(), &committed(), 1).unwrap();
    ensure(full.iter().all(|r| r.encoder_calls_train == 6), "palm on committed spec != 6 calls")?;
    Ok(notes.join("; "))
}

fn parameter_counts() -> Outcome {
    let shape = |classes, dim| ParamShape {
        classes,
        dim,
        context_len: 16,
        embed_dim: 512,
        hidden: 64,
    };
    for (c, d) in [(1, 1), (4, 3), (10, 1024), (50, 1024), (7, 64)] {
        let n = param_count(MethodKind::Palm, shape(c, d)).total();
        ensure(n == c + c * d, format!("palm c={c} d={d}: {n}"))?;
    }
    let coop = param_count(MethodKind::Coop, shape(10, 1024)).total();
    ensure(coop == 8192, format!("coop {coop}"))?;
    let meta = param_count(MethodKind::Cocoop, shape(10, 1024)).group("meta-net");
    ensure(meta == Some(98_880), format!("cocoop meta-net {meta:?}"))?;
    let table_classes = [4usize, 10, 50, 10, 10, 6, 8, 6, 4, 15, 10];
    let sum: usize = table_classes.iter().map(|&c| param_count(MethodKind::Palm, shape(c, 1024)).total()).sum();
    let mean = (sum as f64 / table_classes.len() as f64).trunc() as usize;
    ensure(mean == 12_393, format!("mean palm count {mean}"))?;
    Ok(format!("palm c+c·d, coop {coop}, mean palm {mean}, meta-net 98880"))
}

const ZERO_SHOT_CORRECT: usize = 259;
const PALM_CORRECT: [usize; 3] = [334, 341, 328];

fn synthetic_end_to_end() -> Outcome {
    let bundle = committed();
    let zs = run_experiment(&ExperimentConfig::default().with_method(MethodKind::ZeroShot), &bundle, 1).unwrap();
    let start = Instant::now();
    let palm = run_experiment(&ExperimentConfig::default(), &bundle, 1).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let z = &zs[0];
    let ds = &bundle.dataset;
    let prompts = build_class_prompts(ds.classes(), DEFAULT_TEMPLATE).unwrap();
    let enc = ToyTextEncoder::aligned(EncoderConfig::new(ds.dim()), &prompts, bundle.anchors.as_ref().unwrap()).unwrap();
    let feats: Vec<Vec<f64>> = prompts.iter().map(|p| enc.encode_text(p).unwrap()).collect();
    let oracle = ds.records().iter().filter(|r| common::brute_force(r.vector.as_slice(), &feats) == r.label).count();
    ensure(oracle == ZERO_SHOT_CORRECT, format!("exhaustive scan finds {oracle}/600"))?;
    ensure((z.correct, z.total) == (ZERO_SHOT_CORRECT, 600), format!("zero-shot {}/{}", z.correct, z.total))?;
    ensure((0.4..=0.7).contains(&z.accuracy), format!("zero-shot {} outside [0.4, 0.7]", z.accuracy))?;
    let correct: Vec<usize> = palm.iter().map(|r| r.correct).collect();
    ensure(correct == PALM_CORRECT && palm.iter().all(|r| r.total == 504), format!("palm correct {correct:?}"))?;
    let mean = palm.iter().map(|r| r.accuracy).sum::<f64>() / 3.0;
    ensure(mean - z.accuracy >= 0.15, format!("gain {:.4}", mean - z.accuracy))?;
    ensure(secs < 10.0, format!("palm took {secs:.2}s"))?;
    Ok(format!(
        "zero-shot {:.4}, palm {:.4} (+{:.1} points), palm {secs:.2}s",
        z.accuracy,
        mean,
        100.0 * (mean - z.accuracy)
    ))
}

fn ablations() -> Outcome {
    let bundle = committed();
    let base = ExperimentConfig {
        template: CLASS_NAME_TEMPLATE.to_string(),
        ..ExperimentConfig::default()
    };
    let key = |rs: &[RunResult]| rs.iter().map(|r| (r.correct, r.total)).collect::<Vec<_>>();
    let zs = run_experiment(&base.with_method(MethodKind::ZeroShot), &bundle, 1).unwrap();
    let nc = run_experiment(&base.with_method(MethodKind::PalmNoContext), &bundle, 1).unwrap();
    ensure(key(&zs) == key(&nc), format!("zero-shot {:?} vs no-context {:?}", key(&zs), key(&nc)))?;

    let nt_cfg = base.with_method(MethodKind::PalmNoText);
    let nt = run_experiment(&nt_cfg, &bundle, 1).unwrap();
    let names = bundle.dataset.classes().names().to_vec();
    for shift in 1..names.len() {
        let permuted: Vec<String> = (0..names.len()).map(|i| names[(i + shift) % names.len()].clone()).collect();
        let ds = bundle.dataset.clone().with_class_names(permuted).unwrap();
        let b = DatasetBundle::new("permuted", ds, bundle.anchors.clone()).unwrap();
        let got = run_experiment(&nt_cfg, &b, 1).unwrap();
        let acc = |rs: &[RunResult]| rs.iter().map(|r| r.accuracy.to_bits()).collect::<Vec<_>>();
        ensure(acc(&got) == acc(&nt), format!("no-text changed under name rotation {shift}"))?;
    }
    Ok(format!("no-context = zero-shot {:?}; no-text unchanged over {} renamings", key(&zs), names.len() - 1))
}

const SHOT_MEANS: [f64; 5] = [
    0.6560044893378226,
    0.6587301587301587,
    0.6620370370370371,
    0.6612318840579711,
    0.6633597883597884,
];

fn shots_trend() -> Outcome {
    let shots = [1, 2, 4, 8, 16];
    let points = shots_sweep(&ExperimentConfig::default(), &committed(), &shots, 1).unwrap();
    let means: Vec<f64> = points.iter().map(|p| p.mean_accuracy).collect();
    ensure(means == SHOT_MEANS, format!("means {means:?} differ from fixture"))?;
    for w in means.windows(2) {
        ensure(w[1] >= w[0] - 0.02, format!("drop {:.4} -> {:.4}", w[0], w[1]))?;
    }
    let shown: Vec<String> = means.iter().map(|m| format!("{m:.4}")).collect();
    Ok(format!("k=1..16 means {}", shown.join(" ")))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let big = dir.path().join("committed.jsonl");
    let small = dir.path().join("small.bin");
    let b = committed();
    save_as(&b.dataset, &big, FileFormat::Jsonl).unwrap();
    let sb = small_bundle();
    save_as(&sb.dataset, &small, FileFormat::Binary).unwrap();
    let bin = env!("CARGO_BIN_EXE_palmlab");
    let bench = |data: &Path, methods: &str, extra: &[&str], jobs: &str, tag: &str| -> Result<(Vec<u8>, Vec<u8>), String> {
        let table = dir.path().join(format!("{tag}.md"));
        let results = dir.path().join(format!("{tag}.jsonl"));
        let mut args: Vec<&str> = vec!["bench", "--data", data.to_str().unwrap(), "--methods", methods, "--jobs", jobs];
        args.extend_from_slice(&["--out", table.to_str().unwrap(), "--results", results.to_str().unwrap()]);
        args.extend_from_slice(extra);
        let o = Command::new(bin).args(&args).output().unwrap();
        ensure(o.status.success(), String::from_utf8_lossy(&o.stderr).into_owned())?;
        Ok((std::fs::read(table).unwrap(), std::fs::read(results).unwrap()))
    };
    let all: Vec<&str> = MethodKind::ALL.iter().map(|m| m.as_str()).collect();
    let all = all.join(",");
    let small_flags = ["--shots", "2", "--epochs", "3", "--ctx", "2", "--hidden", "4", "--embed", "8"];
    let cv_flags = ["--shots", "2", "--epochs", "3", "--ctx", "2", "--hidden", "4", "--embed", "8", "--folds", "3"];
    let runs: [(&Path, &str, &[&str]); 3] = [
        (&big, "zeroshot,palm,linear,palm-no-text", &[]),
        (&small, &all, &small_flags),
        (&small, &all, &cv_flags),
    ];
    for (i, (data, methods, extra)) in runs.iter().enumerate() {
        let a = bench(data, methods, extra, "1", &format!("{i}a"))?;
        let b = bench(data, methods, extra, "1", &format!("{i}b"))?;
        let c = bench(data, methods, extra, "4", &format!("{i}c"))?;
        ensure(a == b, format!("run {i}: repeat differs"))?;
        ensure(a == c, format!("run {i}: --jobs 4 differs"))?;
    }
    Ok("3 benchmarks byte-identical across repeats and --jobs 1/4".into())
}

fn bits(set: &ParamSet) -> Vec<u64> {
    set.ids().flat_map(|id| set.value(id).iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect()
}

fn frozen_conservation() -> Outcome {
    let bundle = small_bundle();
    let ds = &bundle.dataset;
    let audio_before: Vec<Vec<u64>> = ds.records().iter().map(|r| r.vector.iter().map(|v| v.to_bits()).collect()).collect();
    let prompts = build_class_prompts(ds.classes(), CLASS_NAME_TEMPLATE).unwrap();
    let enc_cfg = EncoderConfig {
        embed_dim: 8,
        ..EncoderConfig::new(ds.dim())
    };
    let enc = ToyTextEncoder::aligned(enc_cfg, &prompts, bundle.anchors.as_ref().unwrap()).unwrap();
    let weights_before = bits(enc.weights());
    let idx: Vec<usize> = (0..ds.len()).step_by(3).collect();
    let train = TrainSet::from_dataset(ds, &idx).unwrap();
    let train_before: Vec<Vec<u64>> = train.audio().iter().map(|v| v.iter().map(|x| x.to_bits()).collect()).collect();
    let cfg = TrainConfig {
        epochs: 3,
        lr: 0.05,
        temperature: 1.0,
        seed: 0,
        z_init: ZInit::FromCache,
        context_len: 2,
        meta_hidden: 4,
        context_init_std: 0.02,
    };
    let counted = CountedEncoder::new(&enc);
    let texts = ClassTexts::new(&enc, &prompts).unwrap();
    let cache = TextFeatureCache::build(&counted, &prompts).unwrap();
    let mut trained = Vec::new();
    let mut note = |m: &str| trained.push(m.to_string());
    train_palm(&train, &cache, &cfg).unwrap();
    note("palm");
    train_coop(&train, &counted, &texts, &cfg).unwrap();
    note("coop");
    train_cocoop(&train, &counted, &texts, &cfg).unwrap();
    note("cocoop");
    train_linear_probe(&train, &cfg).unwrap();
    note("linear");
    train_palm_no_text(&train, &cfg).unwrap();
    note("palm-no-text");
    for base in [PromptBase::Coop, PromptBase::Cocoop, PromptBase::CocoopDagger] {
        train_palm_plus(base, &train, &counted, &texts, &cfg).unwrap();
        note("palm+x");
    }
    ensure(bits(enc.weights()) == weights_before, "encoder weights changed")?;
    let train_after: Vec<Vec<u64>> = train.audio().iter().map(|v| v.iter().map(|x| x.to_bits()).collect()).collect();
    ensure(train_after == train_before, "training audio changed")?;
    for m in MethodKind::ALL {
        run_experiment(&small_config(m), &bundle, 2).unwrap();
    }
    let audio_after: Vec<Vec<u64>> = ds.records().iter().map(|r| r.vector.iter().map(|v| v.to_bits()).collect()).collect();
    ensure(audio_after == audio_before, "dataset audio changed")?;
    Ok(format!("{} direct trainings and {} harness methods", trained.len(), MethodKind::ALL.len()))
}

fn brute_force_oracle() -> Outcome {
    let mut checked = 0;
    for seed in 0..40u64 {
        for (path, pred, oracle) in common::prediction_paths(seed) {
            checked += pred.len();
            ensure(pred == oracle, format!("{path} on instance {seed}: {pred:?} vs {oracle:?}"))?;
        }
    }
    Ok(format!("{checked} predictions over 40 instances"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient suite", gradient_suite),
        ("zero-shot reduction", zero_shot_reduction),
        ("efficiency counters", efficiency),
        ("parameter counts", parameter_counts),
        ("synthetic end-to-end", synthetic_end_to_end),
        ("ablation identities", ablations),
        ("shots trend", shots_trend),
        ("determinism", determinism),
        ("frozen-weight conservation", frozen_conservation),
        ("brute-force oracle", brute_force_oracle),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
