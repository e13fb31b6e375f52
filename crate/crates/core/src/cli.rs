//! Command-line front end. Exit status is 0 on success, 1 for usage errors
//! and 2 for runtime or verification failures.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfigFile;
use crate::data::{generate_dataset, read_dataset, write_dataset, Dataset};
use crate::error::Error;
use crate::head::LossMode;
use crate::metrics::{evaluate, memory_attention_report, memory_table, DEFAULT_RECALL_KS};
use crate::model::{model_grad_check, Checkpoint, GradCheckSetup};
use crate::train::{decoupled_classifier_retrain, train, OptimizerKind, TraceRecord, TrainConfig};

pub const CONFIG_ECHO_FILE: &str = "config.echo";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const METRICS_TABLE_FILE: &str = "metrics.txt";
pub const MEMORY_FILE: &str = "memory_report.json";
pub const MEMORY_TABLE_FILE: &str = "memory_report.txt";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "ttr", version, about = "Long-tail relationship recognition on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic long-tail dataset.
    GenData(GenDataArgs),
    /// Jointly train encoders and classifier.
    Train(TrainArgs),
    /// Retrain only the classifier of a checkpoint with class-balanced sampling.
    RetrainClassifier(RetrainArgs),
    /// Compute every metric of a checkpoint on one split.
    Eval(EvalArgs),
    /// Compare analytic and numeric gradients of a small full model.
    GradCheck(GradCheckArgs),
    /// Per-class memory attention table of a checkpoint.
    MemReport(MemReportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Ablation {
    Global,
    Memory,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// Run configuration; its `[data]` table is used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scenes: Option<usize>,
    #[arg(long)]
    relation_zipf: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory written by gen-data.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    optimizer: Option<OptimizerKind>,
    #[arg(long)]
    loss: Option<LossMode>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Remove a component; may be repeated.
    #[arg(long, value_enum)]
    ablate: Vec<Ablation>,
}

#[derive(Args, Debug)]
struct RetrainArgs {
    /// Run configuration; its `[train]` table replaces the one stored in the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    loss: Option<LossMode>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Directory for metrics files; the table is always printed.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    /// Recall cutoffs.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_RECALL_KS.to_vec())]
    k: Vec<usize>,
}

#[derive(Args, Debug)]
struct MemReportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
}

#[derive(Args, Debug)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 16)]
    h: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    /// Layers per encoder.
    #[arg(long, default_value_t = 1)]
    layers: usize,
    /// Memory slots.
    #[arg(long, default_value_t = 4)]
    m: usize,
    #[arg(long, default_value_t = 3)]
    triplets: usize,
    #[arg(long, default_value_t = 5)]
    classes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = LossMode::Ce)]
    loss: LossMode,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => Failure::Usage(msg),
            Error::Parse { .. } => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type CliResult = std::result::Result<(), Failure>;

/// Parses `args` (program name first) and runs the command, returning the exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    let result = match cli.command {
        Command::GenData(a) => gen_data(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::RetrainClassifier(a) => retrain_cmd(a, out),
        Command::Eval(a) => eval_cmd(a, out),
        Command::GradCheck(a) => grad_check_cmd(a, out),
        Command::MemReport(a) => mem_report_cmd(a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "usage error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_FAILURE
        }
    }
}

fn load_config(path: Option<&Path>) -> crate::Result<RunConfigFile> {
    path.map_or_else(|| Ok(RunConfigFile::default()), RunConfigFile::load)
}

fn existing_dir(path: &Path, what: &str) -> std::result::Result<(), Failure> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} {} is not a directory", path.display())))
    }
}

fn load_checkpoint(path: &Path) -> std::result::Result<Checkpoint, Failure> {
    if !path.is_file() {
        return Err(Failure::Usage(format!("checkpoint {} does not exist", path.display())));
    }
    Ok(Checkpoint::load(path)?)
}

fn load_data(dir: &Path) -> std::result::Result<Dataset, Failure> {
    existing_dir(dir, "dataset")?;
    Ok(read_dataset(dir)?)
}

fn write_echo(dir: &Path, config: &RunConfigFile) -> crate::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(CONFIG_ECHO_FILE), config.to_toml()?)?;
    Ok(())
}

fn write_trace(dir: &Path, trace: &[TraceRecord]) -> crate::Result<()> {
    let mut text = String::from("epoch,step,loss\n");
    for r in trace {
        text += &format!("{},{},{:e}\n", r.epoch, r.step, r.loss);
    }
    fs::write(dir.join(TRACE_FILE), text)?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> crate::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn gen_data(a: GenDataArgs, out: &mut dyn Write) -> CliResult {
    let mut config = load_config(a.config.as_deref())?;
    let d = &mut config.data;
    d.seed = a.seed.unwrap_or(d.seed);
    d.scenes = a.scenes.unwrap_or(d.scenes);
    d.relation_zipf = a.relation_zipf.unwrap_or(d.relation_zipf);
    config.validate()?;
    let dataset = generate_dataset(&config.data)?;
    write_dataset(&a.out, &dataset)?;
    write_echo(&a.out, &config)?;
    let s = dataset.manifest.splits;
    let _ = writeln!(
        out,
        "wrote {}: {} train / {} val / {} test triplets",
        a.out.display(),
        s.train_triplets,
        s.val_triplets,
        s.test_triplets
    );
    Ok(())
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write) -> CliResult {
    let mut config = load_config(a.config.as_deref())?;
    let dataset = load_data(&a.data)?;
    let t = &mut config.train;
    t.seed = a.seed.unwrap_or(t.seed);
    t.epochs = a.epochs.unwrap_or(t.epochs);
    t.batch_size = a.batch_size.unwrap_or(t.batch_size);
    t.optimizer.learning_rate = a.lr.unwrap_or(t.optimizer.learning_rate);
    t.optimizer.kind = a.optimizer.unwrap_or(t.optimizer.kind);
    t.loss.mode = a.loss.unwrap_or(t.loss.mode);
    t.model.dropout = a.dropout.unwrap_or(t.model.dropout);
    t.model.disable_global |= a.ablate.contains(&Ablation::Global);
    t.model.disable_memory |= a.ablate.contains(&Ablation::Memory);
    t.fit_dataset(&dataset.manifest);
    config.data = dataset.manifest.generator.clone();
    config.validate()?;
    write_echo(&a.out, &config)?;

    let outcome = match train(&config.train, &dataset) {
        Ok(o) => o,
        Err(Error::Divergence { step, loss, trace }) => {
            let records: Vec<TraceRecord> =
                trace.iter().enumerate().map(|(i, &l)| TraceRecord { epoch: 0, step: i, loss: l }).collect();
            write_trace(&a.out, &records)?;
            return Err(Failure::Runtime(Error::Divergence { step, loss, trace }));
        }
        Err(e) => return Err(e.into()),
    };
    Checkpoint::new(&outcome.model, "joint", Some(config.train.clone())).save(&a.out.join(CHECKPOINT_FILE))?;
    write_trace(&a.out, &outcome.trace)?;
    let _ = writeln!(
        out,
        "trained {} steps, final loss {:.6}; wrote {}",
        outcome.trace.len(),
        outcome.final_loss().unwrap_or(f64::NAN),
        a.out.display()
    );
    Ok(())
}

fn retrain_cmd(a: RetrainArgs, out: &mut dyn Write) -> CliResult {
    let ck = load_checkpoint(&a.checkpoint)?;
    let dataset = load_data(&a.data)?;
    let mut train_config: TrainConfig = match &a.config {
        Some(path) => RunConfigFile::load(path)?.train,
        None => ck.train.clone().unwrap_or_default(),
    };
    train_config.model = ck.model.clone();
    train_config.seed = a.seed.unwrap_or(train_config.seed);
    let r = &mut train_config.retrain;
    r.steps = a.steps.unwrap_or(r.steps);
    r.batch_size = a.batch_size.unwrap_or(r.batch_size);
    r.optimizer.learning_rate = a.lr.unwrap_or(r.optimizer.learning_rate);
    train_config.loss.mode = a.loss.unwrap_or(train_config.loss.mode);
    let config = RunConfigFile { data: dataset.manifest.generator.clone(), train: train_config };
    config.validate()?;
    let model = ck.to_model()?;
    write_echo(&a.out, &config)?;
    let outcome = decoupled_classifier_retrain(&model, &dataset, &config.train)?;
    Checkpoint::new(&outcome.model, "decoupled", Some(config.train.clone())).save(&a.out.join(CHECKPOINT_FILE))?;
    write_trace(&a.out, &outcome.trace)?;
    let _ = writeln!(
        out,
        "retrained classifier for {} steps, final loss {:.6}; wrote {}",
        outcome.trace.len(),
        outcome.final_loss().unwrap_or(f64::NAN),
        a.out.display()
    );
    Ok(())
}

fn echo_for(ck: &Checkpoint, dataset: &Dataset) -> RunConfigFile {
    let mut train = ck.train.clone().unwrap_or_default();
    train.model = ck.model.clone();
    RunConfigFile { data: dataset.manifest.generator.clone(), train }
}

fn eval_cmd(a: EvalArgs, out: &mut dyn Write) -> CliResult {
    if a.k.is_empty() || a.k.contains(&0) {
        return Err(Failure::Usage("recall cutoffs must be positive".into()));
    }
    let ck = load_checkpoint(&a.checkpoint)?;
    let dataset = load_data(&a.data)?;
    let model = ck.to_model()?;
    let report = evaluate(&model, &dataset, &a.split, &a.k)?;
    let table = report.to_table();
    if let Some(dir) = &a.out {
        write_echo(dir, &echo_for(&ck, &dataset))?;
        write_json(&dir.join(METRICS_FILE), &report)?;
        fs::write(dir.join(METRICS_TABLE_FILE), &table)?;
    }
    let _ = write!(out, "{table}");
    Ok(())
}

fn mem_report_cmd(a: MemReportArgs, out: &mut dyn Write) -> CliResult {
    let ck = load_checkpoint(&a.checkpoint)?;
    let dataset = load_data(&a.data)?;
    let model = ck.to_model()?;
    if model.config.disable_memory {
        return Err(Failure::Usage("checkpoint was trained without memory attention".into()));
    }
    let scenes = dataset
        .split(&a.split)
        .ok_or_else(|| Failure::Usage(format!("unknown split {:?}; expected train, val or test", a.split)))?;
    let m = &dataset.manifest;
    let report = memory_attention_report(&model, scenes, &m.relation_buckets()?, &m.relation_counts)?;
    let table = memory_table(&report);
    if let Some(dir) = &a.out {
        write_echo(dir, &echo_for(&ck, &dataset))?;
        write_json(&dir.join(MEMORY_FILE), &report)?;
        fs::write(dir.join(MEMORY_TABLE_FILE), &table)?;
    }
    let _ = write!(out, "{table}");
    Ok(())
}

fn grad_check_cmd(a: GradCheckArgs, out: &mut dyn Write) -> CliResult {
    let setup = GradCheckSetup {
        hidden: a.h,
        heads: a.heads,
        layers: a.layers,
        memory_slots: a.m,
        triplets: a.triplets,
        classes: a.classes,
        loss: crate::head::LossConfig { mode: a.loss, ..Default::default() },
        seed: a.seed,
        ..GradCheckSetup::default()
    };
    let report = model_grad_check(&setup, a.eps, a.tol)?;
    let worst = report.worst.as_ref().map_or(String::from("-"), |(name, i)| format!("{name}[{i}]"));
    if report.passed() {
        let _ = writeln!(out, "PASS max_rel_err < {:e}", a.tol);
        let _ = writeln!(
            out,
            "max_rel_err = {:.3e} over {} entries (worst {worst})",
            report.max_rel_error, report.entries_checked
        );
        Ok(())
    } else {
        let _ = writeln!(out, "FAIL max_rel_err = {:.3e} >= {:e} (worst {worst})", report.max_rel_error, a.tol);
        Err(Failure::Runtime(Error::Verification(format!(
            "max relative error {:.3e} exceeds {:e}",
            report.max_rel_error, a.tol
        ))))
    }
}
