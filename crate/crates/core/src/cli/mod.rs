//! `palmlab` command line: `generate`, `run`, `bench`, `sweep`, `params`.
//!
//! Exit codes: 0 success, 2 bad flags or config, 3 I/O, 4 data
//! validation, 5 numerical failure.

mod config;

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::embedio::{
    anchors_to_dataset, assign_folds, generate_synthetic, save_as, DataError, FileFormat, SyntheticSpec,
};
use crate::harness::{
    emit_table, failure_lines, mean, run_experiment, shots_sweep, DatasetBundle, EncoderSettings, ExperimentConfig,
    HarnessError, RunOutcome, RunResult, TableFormat,
};
use crate::methods::{param_count, zero_shot_predict, MethodKind, ParamShape, ZInit, DEFAULT_TEMPLATE};

pub use config::{expand_config, ConfigError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_DATA: i32 = 4;
pub const EXIT_NUMERIC: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "palmlab", version, about = "Few-shot prompt learning over frozen audio-text embeddings")]
#[command(args_override_self = true)]
pub struct Cli {
    /// Plain-text "key = value" file merged under the explicit flags
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset and its text anchors
    Generate(GenerateArgs),
    /// Run one method over all seeds (and folds)
    Run(RunArgs),
    /// Run every method on every dataset and write a table
    Bench(BenchArgs),
    /// Accuracy against the number of shots
    Sweep(SweepArgs),
    /// Learnable-parameter count of a method
    Params(ParamsArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 6, value_parser = clap::value_parser!(u64).range(2..))]
    pub classes: u64,
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(2..))]
    pub dim: u64,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub samples_per_class: u64,
    #[arg(long, default_value_t = 7)]
    pub text_seed: u64,
    #[arg(long, default_value_t = 11)]
    pub audio_seed: u64,
    /// Per-class audio/text misalignment σ
    #[arg(long, default_value_t = 0.9, value_parser = non_negative)]
    pub alignment_noise: f64,
    /// Shared modality-gap magnitude γ
    #[arg(long, default_value_t = 0.5, value_parser = non_negative)]
    pub modality_gap: f64,
    /// Within-class spread s
    #[arg(long, default_value_t = 0.3, value_parser = positive)]
    pub spread: f64,
    /// Also write a stratified assignment into this many folds
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    pub folds: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// File format; inferred from the extension when omitted (.bin is binary)
    #[arg(long, value_parser = ["jsonl", "bin"])]
    pub format: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
    pub shots: u64,
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: u64,
    #[arg(long, default_value_t = 0.05, value_parser = positive)]
    pub lr: f64,
    /// Softmax temperature τ
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    pub temp: f64,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    /// Cross-validate over this many folds instead of train/test
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    pub folds: Option<u64>,
    /// Zero-shot prompt template with one {} slot
    #[arg(long, default_value = DEFAULT_TEMPLATE)]
    pub template: String,
    /// Initial PALM context vectors
    #[arg(long, default_value = "from-cache", value_parser = ["from-cache", "gaussian"])]
    pub z_init: String,
    /// Context tokens M
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
    pub ctx: u64,
    /// Meta-network hidden width h
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
    pub hidden: u64,
    /// Token embedding width e of the toy encoder
    #[arg(long, default_value_t = 512, value_parser = clap::value_parser!(u64).range(1..))]
    pub embed: u64,
    #[arg(long, default_value_t = 4096, value_parser = clap::value_parser!(u64).range(1..))]
    pub vocab: u64,
    #[arg(long, default_value_t = 0)]
    pub encoder_seed: u64,
    /// Worker threads; output does not depend on this
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: u64,
}

impl TrainArgs {
    fn config(&self, method: MethodKind) -> ExperimentConfig {
        ExperimentConfig {
            method,
            shots: self.shots as usize,
            epochs: self.epochs as usize,
            lr: self.lr,
            temperature: self.temp,
            seeds: self.seeds.clone(),
            folds: self.folds.map(|f| f as usize),
            template: self.template.clone(),
            z_init: if self.z_init == "gaussian" {
                ZInit::Gaussian
            } else {
                ZInit::FromCache
            },
            context_len: self.ctx as usize,
            meta_hidden: self.hidden as usize,
            context_init_std: 0.02,
            encoder: EncoderSettings {
                vocab_size: self.vocab as usize,
                embed_dim: self.embed as usize,
                seed: self.encoder_seed,
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, default_value = "palm")]
    pub method: MethodKind,
    #[arg(long)]
    pub data: PathBuf,
    /// Text anchors; defaults to a sibling `<stem>.anchors.<ext>` if present
    #[arg(long)]
    pub anchors: Option<PathBuf>,
    /// Results JSONL, one line per run
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Dataset files, comma-separated or repeated
    #[arg(long, value_delimiter = ',', required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "zeroshot,palm")]
    pub methods: Vec<MethodKind>,
    /// Table path; `.csv` writes CSV, anything else markdown
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_parser = ["markdown", "csv"])]
    pub format: Option<String>,
    /// Results JSONL for every completed run
    #[arg(long)]
    pub results: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, default_value = "palm")]
    pub method: MethodKind,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub anchors: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
    pub shots_list: Vec<usize>,
    /// CSV series `shots,mean,seed...`
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[arg(long, default_value = "palm")]
    pub method: MethodKind,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 1024)]
    pub dim: usize,
    #[arg(long, default_value_t = 16)]
    pub ctx: usize,
    #[arg(long, default_value_t = 512)]
    pub embed: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a positive number, got {s:?}")),
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a non-negative number, got {s:?}")),
    }
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new(EXIT_IO, format!("{}: {e}", path.display()))
    }
}

fn data_code(e: &DataError) -> i32 {
    match e {
        DataError::Io(_) => EXIT_IO,
        _ => EXIT_DATA,
    }
}

pub fn harness_code(e: &HarnessError) -> i32 {
    match e {
        HarnessError::Config(_) => EXIT_USAGE,
        HarnessError::Data(d) => data_code(d),
        HarnessError::EmptyClass(_) | HarnessError::NoFolds | HarnessError::EmptyResults => EXIT_DATA,
        HarnessError::Method { .. } => EXIT_NUMERIC,
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        Self::new(harness_code(&e), e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        Self::new(data_code(&e), e.to_string())
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Generate(a) => cmd_generate(&a),
        Command::Run(a) => cmd_run(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Params(a) => cmd_params(&a),
    }
}

/// `data.jsonl` → `data.anchors.jsonl`
pub fn anchors_path_for(data: &Path) -> PathBuf {
    let stem = data.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match data.extension() {
        Some(ext) => format!("{stem}.anchors.{}", ext.to_string_lossy()),
        None => format!("{stem}.anchors"),
    };
    data.with_file_name(name)
}

fn load_bundle(data: &Path, anchors: Option<&Path>) -> Result<DatasetBundle, CliError> {
    let sibling = anchors_path_for(data);
    let anchors = match anchors {
        Some(p) => Some(p.to_path_buf()),
        None if sibling.is_file() => Some(sibling),
        None => None,
    };
    DatasetBundle::load(data, anchors.as_deref()).map_err(|e| {
        let files = match &anchors {
            Some(a) => format!("{} (anchors {})", data.display(), a.display()),
            None => data.display().to_string(),
        };
        CliError::new(harness_code(&e), format!("{files}: {e}"))
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn results_jsonl(results: &[RunResult]) -> String {
    results.iter().map(|r| r.to_json_line() + "\n").collect()
}

fn cmd_generate(a: &GenerateArgs) -> Result<(), CliError> {
    let spec = SyntheticSpec {
        classes: a.classes as usize,
        dim: a.dim as usize,
        samples_per_class: a.samples_per_class as usize,
        text_anchor_seed: a.text_seed,
        audio_seed: a.audio_seed,
        alignment_noise: a.alignment_noise,
        modality_gap: a.modality_gap,
        within_class_spread: a.spread,
    };
    let (mut dataset, anchors) = generate_synthetic(&spec).map_err(|e| CliError::new(EXIT_USAGE, e.to_string()))?;
    if let Some(f) = a.folds {
        dataset = assign_folds(&dataset, f as usize, 0).map_err(|e| CliError::new(EXIT_USAGE, e.to_string()))?;
    }
    let format = match a.format.as_deref() {
        Some("bin") => FileFormat::Binary,
        Some(_) => FileFormat::Jsonl,
        None => FileFormat::from_path(&a.out),
    };
    save_as(&dataset, &a.out, format)?;
    let anchor_path = anchors_path_for(&a.out);
    save_as(&anchors_to_dataset(dataset.classes(), &anchors)?, &anchor_path, format)?;

    let correct = dataset
        .records()
        .iter()
        .filter(|r| zero_shot_predict(&r.vector, &anchors).ok() == Some(r.label))
        .count();
    println!(
        "wrote {} (c={}, d={}, N={}) and {}",
        a.out.display(),
        dataset.num_classes(),
        dataset.dim(),
        dataset.len(),
        anchor_path.display()
    );
    println!("zero-shot accuracy with anchors: {:.4}", correct as f64 / dataset.len() as f64);
    Ok(())
}

fn print_runs(results: &[RunResult]) {
    for r in results {
        match r.fold {
            Some(f) => println!("{} seed {} fold {}: {:.4} ({}/{})", r.method, r.seed, f, r.accuracy, r.correct, r.total),
            None => println!("{} seed {}: {:.4} ({}/{})", r.method, r.seed, r.accuracy, r.correct, r.total),
        }
    }
    let accs: Vec<f64> = results.iter().map(|r| r.accuracy).collect();
    if let Some(m) = mean(&accs) {
        println!("average: {m:.4}");
    }
}

fn cmd_run(a: &RunArgs) -> Result<(), CliError> {
    let bundle = load_bundle(&a.data, a.anchors.as_deref())?;
    let cfg = a.train.config(a.method);
    let start = Instant::now();
    let results = run_experiment(&cfg, &bundle, a.train.jobs as usize)?;
    eprintln!("{} runs in {:.2}s", results.len(), start.elapsed().as_secs_f64());
    print_runs(&results);
    if let Some(out) = &a.out {
        write_file(out, &results_jsonl(&results))?;
    }
    Ok(())
}

fn cmd_bench(a: &BenchArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let mut outcomes = Vec::new();
    let mut first_error: Option<CliError> = None;
    let note = |e: CliError, first: &mut Option<CliError>| {
        eprintln!("error: {}", e.message);
        first.get_or_insert(e);
    };
    for path in &a.data {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        let bundle = match load_bundle(path, None) {
            Ok(b) => Ok(b),
            Err(e) => {
                let message = e.message.clone();
                note(e, &mut first_error);
                Err(message)
            }
        };
        for &method in &a.methods {
            let cfg = a.train.config(method);
            let result = match &bundle {
                Ok(b) => run_experiment(&cfg, b, a.train.jobs as usize).map_err(|e| {
                    let message = e.to_string();
                    note(e.into(), &mut first_error);
                    message
                }),
                Err(message) => Err(message.clone()),
            };
            match result {
                Ok(rs) => outcomes.extend(rs.into_iter().map(RunOutcome::Done)),
                Err(message) => {
                    outcomes.extend(cfg.seeds.iter().map(|&seed| RunOutcome::Failed {
                        dataset: id.clone(),
                        method,
                        seed,
                        fold: None,
                        error: message.clone(),
                    }));
                }
            }
        }
    }
    eprintln!("bench finished in {:.2}s", start.elapsed().as_secs_f64());
    let failures = failure_lines(&outcomes);
    if !failures.is_empty() {
        eprint!("{failures}");
    }
    let format = match (a.format.as_deref(), &a.out) {
        (Some(f), _) => f.parse::<TableFormat>().map_err(|e| CliError::new(EXIT_USAGE, e))?,
        (None, Some(p)) if p.extension().is_some_and(|e| e == "csv") => TableFormat::Csv,
        _ => TableFormat::Markdown,
    };
    let table = emit_table(&outcomes, format)?;
    match &a.out {
        Some(p) => write_file(p, &table)?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(table.as_bytes())
                .map_err(|e| CliError::new(EXIT_IO, e.to_string()))?;
        }
    }
    if let Some(p) = &a.results {
        let done: Vec<RunResult> = outcomes
            .iter()
            .filter_map(|o| match o {
                RunOutcome::Done(r) => Some(r.clone()),
                RunOutcome::Failed { .. } => None,
            })
            .collect();
        write_file(p, &results_jsonl(&done))?;
    }
    match first_error {
        Some(e) => Err(CliError::new(e.code, "one or more runs failed")),
        None => Ok(()),
    }
}

fn cmd_sweep(a: &SweepArgs) -> Result<(), CliError> {
    if a.shots_list.is_empty() || a.shots_list.contains(&0) {
        return Err(CliError::new(EXIT_USAGE, "--shots-list needs positive entries"));
    }
    let bundle = load_bundle(&a.data, a.anchors.as_deref())?;
    let cfg = a.train.config(a.method);
    let points = shots_sweep(&cfg, &bundle, &a.shots_list, a.train.jobs as usize)?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    let mut header = vec!["shots".to_string(), "mean".to_string()];
    header.extend(cfg.seeds.iter().map(|s| format!("seed{s}")));
    w.write_record(&header).expect("in-memory write");
    for p in &points {
        let mut row = vec![p.shots.to_string(), format!("{:.4}", p.mean_accuracy)];
        for &s in &cfg.seeds {
            let accs: Vec<f64> = p.results.iter().filter(|r| r.seed == s).map(|r| r.accuracy).collect();
            row.push(format!("{:.4}", mean(&accs).unwrap_or(f64::NAN)));
        }
        w.write_record(&row).expect("in-memory write");
    }
    let series = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8");
    match &a.out {
        Some(p) => write_file(p, &series)?,
        None => print!("{series}"),
    }
    Ok(())
}

fn cmd_params(a: &ParamsArgs) -> Result<(), CliError> {
    let shape = ParamShape {
        classes: a.classes,
        dim: a.dim,
        context_len: a.ctx,
        embed_dim: a.embed,
        hidden: a.hidden,
    };
    let b = param_count(a.method, shape);
    for (name, n) in &b.groups {
        println!("{name}: {n}");
    }
    println!("{} total: {}", a.method, b.total());
    Ok(())
}
