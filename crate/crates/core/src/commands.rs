//! `spikehar` command line: train, eval, ablate and hwreport.
//!
//! Settings come from flags, then an optional TOML file (`--config`), then
//! built-in defaults. Everything is resolved and validated before any data
//! is read or any file is written.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::checkpoint::{self, CheckpointMeta};
use crate::data::{self, NormStats, SplitSpec, SynthSpec, WindowDataset};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::lif::{LifConfig, ResetGrad, ResetMode};
use crate::metrics::{count_ops, estimate_energy, measure_sparsity, EnergyModel};
use crate::model::{Model, ModelKind, ModelSpec, Neuron};
use crate::optim::LR_GRID;
use crate::train::{self, evaluate, metrics_csv, TrainConfig, TrainOutcome, EVAL_BATCH};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATASET: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_VERSION: i32 = 4;

pub const TAU_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
pub const VTH_GRID: [f64; 4] = [0.25, 0.5, 0.75, 1.0];
pub const RESET_GRID: [ResetMode; 2] = [ResetMode::Hard, ResetMode::Soft];

pub const DEFAULT_EPOCHS: usize = 60;
pub const DEFAULT_BATCH: usize = 128;
pub const DEFAULT_SEEDS: [u64; 5] = [1000, 1001, 1002, 1003, 1004];

#[derive(Parser, Debug)]
#[command(
    name = "spikehar",
    version,
    about = "Spiking and ReLU CNNs for windowed sensor classification"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one model per seed, selecting the learning rate on validation accuracy.
    Train(TrainArgs),
    /// Top-1 accuracy and confusion matrix of a checkpoint.
    Eval(EvalArgs),
    /// Sweep tau, v_th and reset mode, averaging test accuracy over seeds.
    Ablate(AblateArgs),
    /// Activation sparsity, operation counts and energy proxy of checkpoints.
    Hwreport(HwArgs),
}

#[derive(Args, Debug, Default, Clone)]
pub struct CommonArgs {
    /// TOML file with default values for any flag (snake_case keys).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset location: UCI-HAR root directory or window CSV file.
    #[arg(long, env = "SPIKEHAR_DATA")]
    pub data: Option<PathBuf>,
    /// auto | ucihar | csv | synth
    #[arg(long)]
    pub dataset_kind: Option<String>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub synth_classes: Option<usize>,
    #[arg(long)]
    pub synth_per_class: Option<usize>,
    #[arg(long)]
    pub synth_steps: Option<usize>,
    #[arg(long)]
    pub synth_channels: Option<usize>,
    #[arg(long)]
    pub synth_noise: Option<f64>,
    #[arg(long)]
    pub synth_seed: Option<u64>,
}

#[derive(Args, Debug, Default, Clone)]
pub struct RunArgs {
    /// spike_cnn | relu_cnn
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub v_th: Option<f64>,
    /// hard | soft
    #[arg(long)]
    pub reset: Option<String>,
    /// attached | detached
    #[arg(long)]
    pub reset_grad: Option<String>,
    /// A positive number or `grid` (1e-4, 3e-4, 1e-3).
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Comma-separated seeds and inclusive ranges, e.g. `1000-1004`.
    #[arg(long)]
    pub seeds: Option<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// tau | v_th | reset | all
    #[arg(long)]
    pub axis: Option<String>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// train | val | test | all
    #[arg(long)]
    pub partition: Option<String>,
}

#[derive(Args, Debug)]
pub struct HwArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Repeat to compare several models on the same data.
    #[arg(long, required = true)]
    pub checkpoint: Vec<PathBuf>,
    /// train | val | test | all
    #[arg(long)]
    pub partition: Option<String>,
    /// Energy per multiply-accumulate, pJ.
    #[arg(long)]
    pub e_mac: Option<f64>,
    /// Energy per accumulate, pJ.
    #[arg(long)]
    pub e_ac: Option<f64>,
    /// Passes over each window charged to a spiking model.
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum FileLr {
    Number(f64),
    Text(String),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum FileSeeds {
    List(Vec<u64>),
    Text(String),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    data: Option<PathBuf>,
    dataset_kind: Option<String>,
    split_seed: Option<u64>,
    out: Option<PathBuf>,
    synth_classes: Option<usize>,
    synth_per_class: Option<usize>,
    synth_steps: Option<usize>,
    synth_channels: Option<usize>,
    synth_noise: Option<f64>,
    synth_seed: Option<u64>,
    model: Option<String>,
    tau: Option<f64>,
    v_th: Option<f64>,
    reset: Option<String>,
    reset_grad: Option<String>,
    lr: Option<FileLr>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    seeds: Option<FileSeeds>,
    axis: Option<String>,
    partition: Option<String>,
    e_mac: Option<f64>,
    e_ac: Option<f64>,
    steps: Option<usize>,
}

fn read_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| {
        let line = e.span().map_or(0, |s| text[..s.start].lines().count().max(1));
        Error::parse(path, line, e.message().to_string())
    })
}

// ---------------------------------------------------------------------------
// Resolved configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Ucihar(PathBuf),
    Csv(PathBuf),
    Synth(SynthSpec),
}

impl DataSource {
    pub fn load(&self) -> Result<WindowDataset> {
        match self {
            DataSource::Ucihar(p) => data::load_ucihar(p),
            DataSource::Csv(p) => data::load_window_csv(p),
            DataSource::Synth(s) => data::synth_generate(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrChoice {
    Grid,
    Fixed(f64),
}

impl LrChoice {
    pub fn values(&self) -> Vec<f64> {
        match self {
            LrChoice::Grid => LR_GRID.to_vec(),
            LrChoice::Fixed(lr) => vec![*lr],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Tau,
    VTh,
    Reset,
}

/// Settings shared by every command.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    /// Explicitly requested split seed; commands reading a checkpoint
    /// otherwise reuse the one stored there.
    pub split_seed: Option<u64>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelKind,
    pub lif: LifConfig,
    pub lr: LrChoice,
    pub epochs: usize,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
}

fn arg_err(msg: impl Into<String>) -> Error {
    Error::Argument(msg.into())
}

pub fn parse_reset(s: &str) -> Result<ResetMode> {
    match s.to_ascii_lowercase().as_str() {
        "hard" => Ok(ResetMode::Hard),
        "soft" => Ok(ResetMode::Soft),
        _ => Err(arg_err(format!("reset must be `hard` or `soft`, got `{s}`"))),
    }
}

pub fn parse_reset_grad(s: &str) -> Result<ResetGrad> {
    match s.to_ascii_lowercase().as_str() {
        "attached" => Ok(ResetGrad::Attached),
        "detached" => Ok(ResetGrad::Detached),
        _ => Err(arg_err(format!(
            "reset_grad must be `attached` or `detached`, got `{s}`"
        ))),
    }
}

pub fn parse_lr(s: &str) -> Result<LrChoice> {
    if s.eq_ignore_ascii_case("grid") {
        return Ok(LrChoice::Grid);
    }
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(LrChoice::Fixed(v)),
        _ => Err(arg_err(format!("lr must be a positive number or `grid`, got `{s}`"))),
    }
}

/// `1000-1004`, `1,5,9`, or a mix of both.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || arg_err(format!("cannot parse seed list `{s}`"));
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim) {
        if let Some((a, b)) = part.split_once('-') {
            let (a, b): (u64, u64) = (
                a.trim().parse().map_err(|_| bad())?,
                b.trim().parse().map_err(|_| bad())?,
            );
            if a > b {
                return Err(bad());
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|_| bad())?);
        }
    }
    Ok(out)
}

pub fn parse_partition(s: &str) -> Result<Partition> {
    match s {
        "train" => Ok(Partition::Train),
        "val" => Ok(Partition::Val),
        "test" => Ok(Partition::Test),
        "all" => Ok(Partition::All),
        _ => Err(arg_err(format!("partition must be train, val, test or all, got `{s}`"))),
    }
}

pub fn parse_axes(s: &str) -> Result<Vec<Axis>> {
    match s {
        "tau" => Ok(vec![Axis::Tau]),
        "v_th" | "vth" => Ok(vec![Axis::VTh]),
        "reset" => Ok(vec![Axis::Reset]),
        "all" => Ok(vec![Axis::Tau, Axis::VTh, Axis::Reset]),
        _ => Err(arg_err(format!("axis must be tau, v_th, reset or all, got `{s}`"))),
    }
}

fn resolve_data(c: &CommonArgs, f: &FileConfig) -> Result<DataConfig> {
    let path = c.data.clone().or_else(|| f.data.clone());
    let kind = c
        .dataset_kind
        .clone()
        .or_else(|| f.dataset_kind.clone())
        .unwrap_or_else(|| "auto".into());
    let source = match (kind.as_str(), path) {
        ("synth", _) => {
            let mut s = SynthSpec::new(
                c.synth_classes.or(f.synth_classes).unwrap_or(3),
                c.synth_per_class.or(f.synth_per_class).unwrap_or(200),
                c.synth_steps.or(f.synth_steps).unwrap_or(64),
                c.synth_channels.or(f.synth_channels).unwrap_or(3),
                c.synth_seed.or(f.synth_seed).unwrap_or(0),
            );
            s.noise = c.synth_noise.or(f.synth_noise).unwrap_or(s.noise);
            if !(s.noise >= 0.0 && s.noise.is_finite()) {
                return Err(arg_err("synth_noise must be a non-negative number"));
            }
            DataSource::Synth(s)
        }
        ("ucihar", Some(p)) => DataSource::Ucihar(p),
        ("csv", Some(p)) => DataSource::Csv(p),
        ("auto", Some(p)) => {
            if p.extension().is_some_and(|e| e == "csv") {
                DataSource::Csv(p)
            } else {
                DataSource::Ucihar(p)
            }
        }
        ("auto" | "ucihar" | "csv", None) => {
            return Err(arg_err(
                "no dataset given: pass --data, set SPIKEHAR_DATA, or use --dataset-kind synth",
            ))
        }
        (k, _) => {
            return Err(arg_err(format!(
                "dataset_kind must be auto, ucihar, csv or synth, got `{k}`"
            )))
        }
    };
    Ok(DataConfig {
        source,
        split_seed: c.split_seed.or(f.split_seed),
        out: c
            .out
            .clone()
            .or_else(|| f.out.clone())
            .unwrap_or_else(|| PathBuf::from("runs")),
    })
}

fn resolve_run(c: &CommonArgs, r: &RunArgs, f: &FileConfig) -> Result<RunConfig> {
    let data = resolve_data(c, f)?;
    let model: ModelKind = match r.model.as_deref().or(f.model.as_deref()) {
        Some(s) => s.parse()?,
        None => ModelKind::SpikeCnn,
    };
    let d = LifConfig::default();
    let reset = match r.reset.as_deref().or(f.reset.as_deref()) {
        Some(s) => parse_reset(s)?,
        None => d.reset,
    };
    let reset_grad = match r.reset_grad.as_deref().or(f.reset_grad.as_deref()) {
        Some(s) => parse_reset_grad(s)?,
        None => d.reset_grad,
    };
    let lif = LifConfig::new(
        r.tau.or(f.tau).unwrap_or(d.tau),
        r.v_th.or(f.v_th).unwrap_or(d.v_th),
        reset,
    )?
    .with_reset_grad(reset_grad);
    let lr = match (&r.lr, &f.lr) {
        (Some(s), _) => parse_lr(s)?,
        (None, Some(FileLr::Text(s))) => parse_lr(s)?,
        (None, Some(FileLr::Number(v))) => parse_lr(&v.to_string())?,
        (None, None) => LrChoice::Grid,
    };
    let seeds = match (&r.seeds, &f.seeds) {
        (Some(s), _) => parse_seeds(s)?,
        (None, Some(FileSeeds::Text(s))) => parse_seeds(s)?,
        (None, Some(FileSeeds::List(v))) => v.clone(),
        (None, None) => DEFAULT_SEEDS.to_vec(),
    };
    if seeds.is_empty() {
        return Err(arg_err("seed list is empty"));
    }
    let batch_size = r.batch_size.or(f.batch_size).unwrap_or(DEFAULT_BATCH);
    if batch_size == 0 {
        return Err(arg_err("batch_size must be at least 1"));
    }
    Ok(RunConfig {
        data,
        model,
        lif,
        lr,
        epochs: r.epochs.or(f.epochs).unwrap_or(DEFAULT_EPOCHS),
        batch_size,
        seeds,
    })
}

// ---------------------------------------------------------------------------
// Failures and exit codes
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub enum Failure {
    /// Bad flags or configuration.
    Usage(Error),
    /// The dataset could not be read.
    Dataset(Error),
    /// Anything after setup.
    Run(Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Dataset(_) => EXIT_DATASET,
            Failure::Run(Error::Divergence { .. }) => EXIT_DIVERGED,
            Failure::Run(Error::Version { .. }) => EXIT_VERSION,
            Failure::Run(_) => EXIT_USAGE,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(e) => write!(f, "configuration error: {e}"),
            Failure::Dataset(e) => write!(f, "cannot load dataset: {e}"),
            Failure::Run(e) => write!(f, "{e}"),
        }
    }
}

type CmdResult<T> = std::result::Result<T, Failure>;

trait Stage<T> {
    fn usage(self) -> CmdResult<T>;
    fn dataset(self) -> CmdResult<T>;
    fn run(self) -> CmdResult<T>;
}

impl<T> Stage<T> for Result<T> {
    fn usage(self) -> CmdResult<T> {
        self.map_err(Failure::Usage)
    }
    fn dataset(self) -> CmdResult<T> {
        self.map_err(Failure::Dataset)
    }
    fn run(self) -> CmdResult<T> {
        self.map_err(Failure::Run)
    }
}

/// Parse `args` (including the program name), execute, and return the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> CmdResult<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Hwreport(a) => cmd_hwreport(a),
    }
}

// ---------------------------------------------------------------------------
// Shared pieces
// ---------------------------------------------------------------------------

pub struct Prepared {
    pub train: WindowDataset,
    pub val: WindowDataset,
    pub test: WindowDataset,
    pub norm: NormStats,
}

impl Prepared {
    /// Split, then normalize with `norm` or with statistics of the train part.
    pub fn new(ds: &WindowDataset, split_seed: u64, norm: Option<NormStats>) -> Result<Self> {
        let (tr, va, te) = data::split(ds, &SplitSpec::new(split_seed))?;
        let norm = match norm {
            Some(n) => n,
            None => NormStats::fit(&tr)?,
        };
        Ok(Self {
            train: norm.apply(&tr)?,
            val: norm.apply(&va)?,
            test: norm.apply(&te)?,
            norm,
        })
    }

    pub fn part(&self, p: Partition) -> WindowDataset {
        match p {
            Partition::Train => self.train.clone(),
            Partition::Val => self.val.clone(),
            Partition::Test => self.test.clone(),
            Partition::All => {
                let mut all = self.train.clone();
                for other in [&self.val, &self.test] {
                    let mut data = all.samples.data().to_vec();
                    data.extend_from_slice(other.samples.data());
                    let mut shape = all.samples.shape().to_vec();
                    shape[0] += other.len();
                    all.samples = crate::tensor::Tensor::new(shape, data).expect("same window shape");
                    all.labels.extend_from_slice(&other.labels);
                }
                all
            }
        }
    }
}

fn model_spec(ds: &WindowDataset, kind: ModelKind, lif: LifConfig, seed: u64) -> ModelSpec {
    let neuron = match kind {
        ModelKind::SpikeCnn => Neuron::Lif(lif),
        ModelKind::ReluCnn => Neuron::Relu,
    };
    ModelSpec::reference(ds.channels(), ds.steps(), ds.class_count, neuron, seed)
}

fn check_compatible(spec: &ModelSpec, ds: &WindowDataset) -> Result<()> {
    if spec.input_channels != ds.channels() || spec.time_steps != ds.steps() || spec.class_count < ds.class_count {
        return Err(arg_err(format!(
            "checkpoint expects {} channels x {} steps and {} classes; dataset has {} x {} and {}",
            spec.input_channels,
            spec.time_steps,
            spec.class_count,
            ds.channels(),
            ds.steps(),
            ds.class_count
        )));
    }
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Result of training one seed with learning-rate selection.
pub struct SeedRun {
    pub seed: u64,
    pub lrs: Vec<f64>,
    pub selected: usize,
    pub outcomes: Vec<TrainOutcome>,
    pub test_acc: f64,
}

fn train_seed(
    cfg: &RunConfig,
    lif: LifConfig,
    prep: &Prepared,
    seed: u64,
    lrs: &[f64],
    log_prefix: &str,
) -> Result<SeedRun> {
    let spec = model_spec(&prep.train, cfg.model, lif, seed);
    let init = Model::<f32>::build(&spec)?;
    let tc = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: lrs[0],
        seed,
    };
    let (selected, mut outcomes) = train::train_lr_grid(&init, &prep.train, &prep.val, &tc, lrs, |lr, m| {
        eprintln!(
            "{log_prefix}seed {seed} lr {lr} epoch {}: loss {:.4} train {:.4} val {:.4}",
            m.epoch, m.train_loss, m.train_acc, m.val_acc
        );
    })?;
    let test_acc = evaluate(&mut outcomes[selected].model, &prep.test, EVAL_BATCH)?.accuracy;
    Ok(SeedRun {
        seed,
        lrs: lrs.to_vec(),
        selected,
        outcomes,
        test_acc,
    })
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

pub fn cmd_train(a: &TrainArgs) -> CmdResult<()> {
    let file = read_config(a.common.config.as_deref()).usage()?;
    let cfg = resolve_run(&a.common, &a.run, &file).usage()?;
    let ds = cfg.data.source.load().dataset()?;
    let split_seed = cfg.data.split_seed.unwrap_or(0);
    let prep = Prepared::new(&ds, split_seed, None).run()?;
    let out = &cfg.data.out;
    ensure_dir(out).run()?;

    let mut summary = String::from("# spikehar train-summary v1\nseed,lr,best_epoch,val_acc,test_acc,selected\n");
    let mut tests = Vec::new();
    for &seed in &cfg.seeds {
        let run = train_seed(&cfg, cfg.lif, &prep, seed, &cfg.lr.values(), "").run()?;
        for (i, (lr, o)) in run.lrs.iter().zip(&run.outcomes).enumerate() {
            write_text(
                &out.join(format!("metrics_seed{seed}_lr{lr}.csv")),
                &metrics_csv(&o.history),
            )
            .run()?;
            let chosen = i == run.selected;
            let test = if chosen {
                run.test_acc.to_string()
            } else {
                String::new()
            };
            let _ = writeln!(
                summary,
                "{seed},{lr},{},{},{test},{}",
                o.best_epoch,
                o.best_val_acc,
                u8::from(chosen)
            );
        }
        let best = &run.outcomes[run.selected];
        let meta = CheckpointMeta {
            norm: Some(prep.norm.clone()),
            split_seed: Some(split_seed),
        };
        checkpoint::save(&best.model, &meta, &out.join(format!("model_seed{seed}.ckpt"))).run()?;
        println!(
            "seed {seed}: lr {} best epoch {} val_acc {:.4} test_acc {:.4}",
            run.lrs[run.selected], best.best_epoch, best.best_val_acc, run.test_acc
        );
        tests.push(run.test_acc);
    }
    write_text(&out.join("train_summary.csv"), &summary).run()?;
    let (m, s) = mean_std(&tests);
    println!("test_acc mean {m:.4} std {s:.4} over {} seeds", tests.len());
    Ok(())
}

fn load_checkpoint(path: &Path) -> CmdResult<(Model<f32>, CheckpointMeta)> {
    checkpoint::load(path).run()
}

pub fn cmd_eval(a: &EvalArgs) -> CmdResult<()> {
    let file = read_config(a.common.config.as_deref()).usage()?;
    let dc = resolve_data(&a.common, &file).usage()?;
    let part = parse_partition(a.partition.as_deref().or(file.partition.as_deref()).unwrap_or("test")).usage()?;
    let (mut model, meta) = load_checkpoint(&a.checkpoint)?;
    let ds = dc.source.load().dataset()?;
    check_compatible(model.spec(), &ds).run()?;
    let split_seed = dc.split_seed.or(meta.split_seed).unwrap_or(0);
    let prep = Prepared::new(&ds, split_seed, meta.norm).run()?;
    let ev = evaluate(&mut model, &prep.part(part), EVAL_BATCH).run()?;
    println!("accuracy,{}", ev.accuracy);
    print!("{}", ev.confusion_csv());
    if a.common.out.is_some() || file.out.is_some() {
        ensure_dir(&dc.out).run()?;
        let stem = a
            .checkpoint
            .file_stem()
            .map_or("model".into(), |s| s.to_string_lossy().into_owned());
        write_text(&dc.out.join(format!("{stem}_confusion.csv")), &ev.confusion_csv()).run()?;
    }
    Ok(())
}

pub fn cmd_ablate(a: &AblateArgs) -> CmdResult<()> {
    let file = read_config(a.common.config.as_deref()).usage()?;
    let cfg = resolve_run(&a.common, &a.run, &file).usage()?;
    let axes = parse_axes(a.axis.as_deref().or(file.axis.as_deref()).unwrap_or("all")).usage()?;
    if cfg.model != ModelKind::SpikeCnn {
        return Err(Failure::Usage(arg_err(
            "ablations sweep LIF settings and need --model spike_cnn",
        )));
    }
    let ds = cfg.data.source.load().dataset()?;
    let prep = Prepared::new(&ds, cfg.data.split_seed.unwrap_or(0), None).run()?;

    let mut cells: Vec<(&str, String, LifConfig)> = Vec::new();
    for axis in axes {
        match axis {
            Axis::Tau => {
                for tau in TAU_GRID {
                    cells.push(("tau", tau.to_string(), LifConfig { tau, ..cfg.lif }));
                }
            }
            Axis::VTh => {
                for v_th in VTH_GRID {
                    cells.push(("v_th", v_th.to_string(), LifConfig { v_th, ..cfg.lif }));
                }
            }
            Axis::Reset => {
                for reset in RESET_GRID {
                    let name = if reset == ResetMode::Hard { "hard" } else { "soft" };
                    cells.push(("reset", name.to_string(), LifConfig { reset, ..cfg.lif }));
                }
            }
        }
    }

    let mut table = String::from("# spikehar ablation v1\naxis,value,mean_acc,std_acc,lr,seeds\n");
    let mut runs = String::from("# spikehar ablation-runs v1\naxis,value,seed,lr,best_epoch,val_acc,test_acc\n");
    for (axis, value, lif) in &cells {
        let prefix = format!("[{axis}={value}] ");
        // learning rate chosen once per cell, on the first seed
        let first = train_seed(&cfg, *lif, &prep, cfg.seeds[0], &cfg.lr.values(), &prefix).run()?;
        let lr = first.lrs[first.selected];
        let mut seed_runs = vec![first];
        for &seed in &cfg.seeds[1..] {
            seed_runs.push(train_seed(&cfg, *lif, &prep, seed, &[lr], &prefix).run()?);
        }
        let accs: Vec<f64> = seed_runs.iter().map(|r| r.test_acc).collect();
        for r in &seed_runs {
            let o = &r.outcomes[r.selected];
            let _ = writeln!(
                runs,
                "{axis},{value},{},{lr},{},{},{}",
                r.seed, o.best_epoch, o.best_val_acc, r.test_acc
            );
        }
        let (m, s) = mean_std(&accs);
        let _ = writeln!(table, "{axis},{value},{m},{s},{lr},{}", accs.len());
        println!("{axis}={value}: mean {m:.4} std {s:.4} (lr {lr})");
    }
    ensure_dir(&cfg.data.out).run()?;
    write_text(&cfg.data.out.join("ablation_runs.csv"), &runs).run()?;
    write_text(&cfg.data.out.join("ablation.csv"), &table).run()?;
    Ok(())
}

pub fn cmd_hwreport(a: &HwArgs) -> CmdResult<()> {
    let file = read_config(a.common.config.as_deref()).usage()?;
    let dc = resolve_data(&a.common, &file).usage()?;
    let part = parse_partition(a.partition.as_deref().or(file.partition.as_deref()).unwrap_or("test")).usage()?;
    let energy = EnergyModel::new(
        a.e_mac.or(file.e_mac).unwrap_or(EnergyModel::default().e_mac),
        a.e_ac.or(file.e_ac).unwrap_or(EnergyModel::default().e_ac),
    )
    .usage()?;
    let steps = a.steps.or(file.steps).unwrap_or(1);
    if steps == 0 {
        return Err(Failure::Usage(arg_err("steps must be at least 1")));
    }
    let mut models = Vec::new();
    for p in &a.checkpoint {
        let stem = p
            .file_stem()
            .map_or("model".into(), |s| s.to_string_lossy().into_owned());
        let (m, meta) = load_checkpoint(p)?;
        models.push((stem, m, meta));
    }
    let ds = dc.source.load().dataset()?;
    ensure_dir(&dc.out).run()?;

    let mut summary =
        String::from("# spikehar hw-summary v1\nmodel,kind,weighted_sparsity,energy_pj,normalized_energy\n");
    for (i, (stem, model, meta)) in models.iter_mut().enumerate() {
        check_compatible(model.spec(), &ds).run()?;
        let split_seed = dc.split_seed.or(meta.split_seed).unwrap_or(0);
        let prep = Prepared::new(&ds, split_seed, meta.norm.clone()).run()?;
        let sp = measure_sparsity(model, &prep.part(part), EVAL_BATCH).run()?;
        let counts = count_ops(model).run()?;
        let report = estimate_energy(&counts, &sp, model.kind(), &energy, steps).run()?;
        write_text(&dc.out.join(format!("{stem}_sparsity.csv")), &sp.to_csv()).run()?;
        write_text(&dc.out.join(format!("{stem}_ops.csv")), &counts.to_csv()).run()?;
        write_text(&dc.out.join(format!("{stem}_energy.csv")), &report.to_csv()).run()?;
        if i == 0 {
            let _ = writeln!(summary, "ann_reference,relu_cnn,,{},1", report.ann_pj);
        }
        let _ = writeln!(
            summary,
            "{stem},{},{},{},{}",
            model.kind(),
            sp.weighted_average(),
            report.total_pj,
            report.ratio
        );
    }
    write_text(&dc.out.join("hw_summary.csv"), &summary).run()?;
    print!("{summary}");
    Ok(())
}
