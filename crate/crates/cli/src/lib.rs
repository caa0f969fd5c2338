//! The `rectiflow` command line.
//!
//! Every subcommand ends by printing a one-line JSON run record on standard
//! output (and to `--run-record` when given). Exit codes: 0 success, 1 usage
//! error, 2 runtime or data error.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use rectiflow::degrade::{apply_meta, sample_meta, DegradationSpec};
use rectiflow::flow::{sweep_midpoint, SamplerConfig, SamplerMode, SweepItem};
use rectiflow::nn::checkpoint::Checkpoint;
use rectiflow::pipeline::{
    self, degraded_baseline, degraded_input, eval_items, evaluate, ingest, load_checkpoint,
    load_image, load_tau_checkpoint, measure_throughput, psnr, save_checkpoint, save_png, save_tau_checkpoint,
    ssim, start_noise, toy_dataset, Dataset, EnhanceOptions, FlowModel, ImageMetrics, MetricReport, Split,
    TrainConfig, Trainer,
};
use rectiflow::{Exec, Tensor};

pub const VERSION: &str = env!("RECTIFLOW_VERSION");

#[derive(Debug, Parser)]
#[command(name = "rectiflow", version = VERSION, about = "Conditioned rectified flow for image enhancement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pre-train the initial stage, then train the velocity network.
    Train(TrainArgs),
    /// Restore one degraded image.
    Enhance(EnhanceArgs),
    /// Apply a sampled degradation to one image and record its parameters.
    Degrade(DegradeArgs),
    /// Score predictions against references, or a checkpoint on a test split.
    Eval(EvalArgs),
    /// Score every midpoint index on a validation set.
    SweepMidpoint(SweepArgs),
    /// Compare sampler throughput on the same model and images.
    Bench(BenchArgs),
    /// Print the manifest of a checkpoint file.
    InspectCheckpoint(InspectArgs),
    /// Write the procedural toy corpus as PNG files.
    MakeToyCorpus(ToyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AblationFlag {
    /// Train at t = 0 and sample in one step.
    NoFlow,
    /// Plain Euler instead of mean-value sampling.
    NoMid,
    /// Guide with the raw degraded image instead of the initial stage output.
    NoInit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SamplerArg {
    Euler,
    Meanvalue,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Random seed; overrides the configuration's seed where one applies.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for data-parallel loops.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Single-threaded numerics (implies --threads 1 unless given).
    #[arg(long)]
    pub deterministic: bool,
    /// Also write the JSON run record to this file.
    #[arg(long)]
    pub run_record: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SamplerArgs {
    /// Sampling scheme.
    #[arg(long, value_enum)]
    pub sampler: Option<SamplerArg>,
    /// Number of uniform segments N.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Midpoint index k (meanvalue only).
    #[arg(long)]
    pub midpoint: Option<usize>,
    /// Jump from z0 with unit scaling instead of from the midpoint state.
    #[arg(long)]
    pub jump_from_origin: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TrainConfig JSON; defaults are used when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Image folder; the toy corpus is generated when neither this nor the config names one.
    #[arg(long, env = "RECTIFLOW_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Separate initial-stage checkpoint to write.
    #[arg(long)]
    pub tau_checkpoint: Option<PathBuf>,
    /// Override the number of flow steps.
    #[arg(long)]
    pub total_steps: Option<usize>,
    /// Override the number of initial-stage steps.
    #[arg(long)]
    pub tau_steps: Option<usize>,
    /// Ablation switch; repeatable.
    #[arg(long, value_enum)]
    pub ablation: Vec<AblationFlag>,
    /// Print the loss every this many steps.
    #[arg(long, default_value_t = 500)]
    pub log_every: usize,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Replace the initial stage with this checkpoint.
    #[arg(long)]
    pub tau_checkpoint: Option<PathBuf>,
    /// Degraded input PNG.
    #[arg(long)]
    pub input: PathBuf,
    /// Output PNG.
    #[arg(long)]
    pub output: PathBuf,
    /// Ablation switch; repeatable.
    #[arg(long, value_enum)]
    pub ablation: Vec<AblationFlag>,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct DegradeArgs {
    /// DegradationSpec JSON; the default restoration spec when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Clean input PNG.
    #[arg(long)]
    pub input: PathBuf,
    /// Degraded output PNG.
    #[arg(long)]
    pub output: PathBuf,
    /// Where to write the sampled parameters (default: output with .json).
    #[arg(long)]
    pub meta: Option<PathBuf>,
    /// Replay parameters from this meta file instead of sampling.
    #[arg(long)]
    pub replay: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Folder of predicted PNGs.
    #[arg(long, requires = "reference", conflicts_with = "checkpoint")]
    pub pred: Option<PathBuf>,
    /// Folder of reference PNGs with the same file names.
    #[arg(long = "ref", requires = "pred")]
    pub reference: Option<PathBuf>,
    /// Checkpoint to evaluate on a test split.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Replace the initial stage with this checkpoint.
    #[arg(long)]
    pub tau_checkpoint: Option<PathBuf>,
    /// Test image folder; the toy test split when absent.
    #[arg(long, env = "RECTIFLOW_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    /// DegradationSpec JSON; the checkpoint's training spec when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Ablation switch; repeatable.
    #[arg(long, value_enum)]
    pub ablation: Vec<AblationFlag>,
    /// Write the MetricReport JSON here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Replace the initial stage with this checkpoint.
    #[arg(long)]
    pub tau_checkpoint: Option<PathBuf>,
    /// Validation image folder; the toy validation split when absent.
    #[arg(long, env = "RECTIFLOW_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    /// Number of uniform segments N.
    #[arg(long, default_value_t = 5)]
    pub steps: usize,
    /// Use at most this many images.
    #[arg(long, default_value_t = 32)]
    pub images: usize,
    /// A larger k must win by more than this many dB.
    #[arg(long, default_value_t = 0.0)]
    pub tie_tolerance: f64,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Trained checkpoint; a freshly initialised toy model when absent.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Number of images M.
    #[arg(long, default_value_t = 64)]
    pub images: usize,
    /// Segments N for mean-value sampling.
    #[arg(long, default_value_t = 5)]
    pub steps: usize,
    /// Midpoint index k for mean-value sampling.
    #[arg(long, default_value_t = 3)]
    pub midpoint: usize,
    /// Steps for the Euler reference.
    #[arg(long, default_value_t = 20)]
    pub euler_steps: usize,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Checkpoint file to describe.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    /// Folder to create.
    #[arg(long)]
    pub output: PathBuf,
    /// Number of images.
    #[arg(long, default_value_t = 256)]
    pub count: usize,
    /// Side length in pixels.
    #[arg(long, default_value_t = 32)]
    pub resolution: usize,
    #[command(flatten)]
    pub run: RunArgs,
}

/// A failure that maps to an exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<rectiflow::Error> for Failure {
    fn from(e: rectiflow::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type CmdResult<T> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

#[derive(Debug, Serialize)]
pub struct RunRecord {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub wall_time_s: f64,
    pub network_evaluations: usize,
    pub exec: Exec,
    pub outputs: Vec<PathBuf>,
    pub details: serde_json::Value,
}

/// What a subcommand reports back for its run record.
struct Outcome {
    config: serde_json::Value,
    seed: Option<u64>,
    evaluations: usize,
    outputs: Vec<PathBuf>,
    details: serde_json::Value,
}

impl Outcome {
    fn new(config: serde_json::Value) -> Self {
        Self {
            config,
            seed: None,
            evaluations: 0,
            outputs: vec![],
            details: serde_json::Value::Null,
        }
    }
}

/// SHA-256 of the compact JSON text of `config`.
pub fn config_hash(config: &serde_json::Value) -> String {
    let digest = Sha256::digest(config.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Parses `args` (including the program name), runs and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {}", error_chain(&e));
            2
        }
    }
}

/// Context chain joined by ": ", skipping causes already quoted by their parent.
fn error_chain(e: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut prev = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !prev.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
        prev = msg;
    }
    out
}

fn sampler_args(cmd: &Command) -> Option<&SamplerArgs> {
    match cmd {
        Command::Train(a) => Some(&a.sampler),
        Command::Enhance(a) => Some(&a.sampler),
        Command::Eval(a) => Some(&a.sampler),
        _ => None,
    }
}

fn run_args(cmd: &Command) -> &RunArgs {
    match cmd {
        Command::Train(a) => &a.run,
        Command::Enhance(a) => &a.run,
        Command::Degrade(a) => &a.run,
        Command::Eval(a) => &a.run,
        Command::SweepMidpoint(a) => &a.run,
        Command::Bench(a) => &a.run,
        Command::InspectCheckpoint(a) => &a.run,
        Command::MakeToyCorpus(a) => &a.run,
    }
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Train(_) => "train",
        Command::Enhance(_) => "enhance",
        Command::Degrade(_) => "degrade",
        Command::Eval(_) => "eval",
        Command::SweepMidpoint(_) => "sweep-midpoint",
        Command::Bench(_) => "bench",
        Command::InspectCheckpoint(_) => "inspect-checkpoint",
        Command::MakeToyCorpus(_) => "make-toy-corpus",
    }
}

pub fn run(cli: Cli) -> CmdResult<()> {
    let start = Instant::now();
    if let Some(sa) = sampler_args(&cli.command) {
        sampler_from_args(sa, SamplerConfig::default())?;
    }
    let ra = run_args(&cli.command);
    let threads = ra.threads.or(ra.deterministic.then_some(1));
    if let Some(n) = threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rectiflow::par::configure_threads(n);
    }
    let exec = if ra.deterministic || threads == Some(1) {
        Exec::Sequential
    } else {
        Exec::Parallel
    };
    let record_path = ra.run_record.clone();
    let name = command_name(&cli.command);
    let outcome = match &cli.command {
        Command::Train(a) => cmd_train(a, exec)?,
        Command::Enhance(a) => cmd_enhance(a)?,
        Command::Degrade(a) => cmd_degrade(a)?,
        Command::Eval(a) => cmd_eval(a, exec)?,
        Command::SweepMidpoint(a) => cmd_sweep(a, exec)?,
        Command::Bench(a) => cmd_bench(a, exec)?,
        Command::InspectCheckpoint(a) => cmd_inspect(a)?,
        Command::MakeToyCorpus(a) => cmd_toy(a)?,
    };
    let record = RunRecord {
        command: name.to_string(),
        version: VERSION.to_string(),
        config_hash: config_hash(&outcome.config),
        seed: outcome.seed,
        wall_time_s: start.elapsed().as_secs_f64(),
        network_evaluations: outcome.evaluations,
        exec,
        outputs: outcome.outputs,
        details: outcome.details,
    };
    let line = serde_json::to_string(&record).map_err(|e| Failure::Runtime(e.into()))?;
    println!("{line}");
    if let Some(p) = record_path {
        std::fs::write(&p, format!("{line}\n")).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn apply_ablations(cfg: &mut TrainConfig, flags: &[AblationFlag]) {
    for f in flags {
        match f {
            AblationFlag::NoFlow => cfg.ablation.use_flow = false,
            AblationFlag::NoMid => cfg.ablation.use_meanvalue = false,
            AblationFlag::NoInit => cfg.ablation.use_initial_stage = false,
        }
    }
}

/// Merges sampler flags into `base`, rejecting inconsistent combinations.
fn sampler_from_args(a: &SamplerArgs, base: SamplerConfig) -> CmdResult<SamplerConfig> {
    let mode = match a.sampler {
        Some(SamplerArg::Euler) => SamplerMode::Euler,
        Some(SamplerArg::Meanvalue) => SamplerMode::MeanValue,
        None => base.mode,
    };
    if mode == SamplerMode::Euler && a.midpoint.is_some() {
        return Err(usage("--midpoint only applies to --sampler meanvalue"));
    }
    if mode == SamplerMode::Euler && a.jump_from_origin {
        return Err(usage("--jump-from-origin only applies to --sampler meanvalue"));
    }
    let steps = a.steps.unwrap_or(base.steps);
    let cfg = match mode {
        SamplerMode::Euler => SamplerConfig::euler(steps),
        SamplerMode::MeanValue => SamplerConfig {
            jump_from_origin: a.jump_from_origin || base.jump_from_origin,
            ..SamplerConfig::mean_value(steps, a.midpoint.unwrap_or(base.midpoint.min(steps.saturating_sub(1))))
        },
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn load_dataset(dir: Option<&Path>, cfg: &TrainConfig) -> anyhow::Result<Dataset> {
    Ok(match dir {
        Some(d) => ingest(d, cfg.resolution, cfg.data.split, cfg.seed)?,
        None => toy_dataset(cfg.data.toy_images, cfg.resolution, cfg.data.split, cfg.seed)?,
    })
}

fn cmd_train(a: &TrainArgs, exec: Exec) -> CmdResult<Outcome> {
    let mut cfg = match &a.config {
        Some(p) => {
            let cfg: TrainConfig = read_json(p)?;
            cfg
        }
        None => TrainConfig::default(),
    };
    if let Some(s) = a.run.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.total_steps {
        cfg.total_steps = n;
    }
    if let Some(n) = a.tau_steps {
        cfg.tau_steps = n;
    }
    apply_ablations(&mut cfg, &a.ablation);
    cfg.sampler = sampler_from_args(&a.sampler, cfg.sampler)?;
    cfg.ablation.jump_from_origin |= a.sampler.jump_from_origin;
    if let Some(d) = &a.data_dir {
        cfg.data.dir = Some(d.clone());
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let data = load_dataset(cfg.data.dir.as_deref(), &cfg)?;
    let (n_train, n_val, n_test) = data.split_sizes();
    eprintln!("dataset: {} images ({n_train} train / {n_val} val / {n_test} test)", data.len());

    let mut trainer = Trainer::new(cfg.clone(), exec)?;
    let every = a.log_every.max(1);
    let tau_losses = trainer.pretrain_tau(&data, |i, l| {
        if (i + 1) % every == 0 {
            eprintln!("tau step {:>6}  loss {l:.6}", i + 1);
        }
    })?;
    let losses = trainer.train(&data, |s| {
        if s.step as usize % every == 0 {
            eprintln!("flow step {:>6}  loss {:.6}", s.step, s.loss);
        }
    })?;
    save_checkpoint(&a.checkpoint, &trainer.model, Some(&trainer.opt), Some(&cfg))?;
    let mut outputs = vec![a.checkpoint.clone()];
    if let Some(p) = &a.tau_checkpoint {
        save_tau_checkpoint(p, &trainer.model)?;
        outputs.push(p.clone());
    }
    let mut out = Outcome::new(serde_json::to_value(&cfg).map_err(anyhow::Error::from)?);
    out.seed = Some(cfg.seed);
    out.evaluations = losses.len() * cfg.batch_size;
    out.outputs = outputs;
    out.details = serde_json::json!({
        "final_loss": losses.last(),
        "final_tau_loss": tau_losses.last(),
        "steps": losses.len(),
        "tau_steps": tau_losses.len(),
    });
    Ok(out)
}

fn load_model(checkpoint: &Path, tau: Option<&PathBuf>) -> anyhow::Result<(FlowModel, Option<TrainConfig>)> {
    let saved = load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let mut model = saved.model;
    if let Some(p) = tau {
        load_tau_checkpoint(p, &mut model).with_context(|| format!("loading {}", p.display()))?;
    }
    Ok((model, saved.config))
}

fn enhance_options(
    cfg: &Option<TrainConfig>,
    sampler: &SamplerArgs,
    ablation: &[AblationFlag],
    seed: Option<u64>,
) -> CmdResult<EnhanceOptions> {
    let mut cfg = cfg.clone().unwrap_or_default();
    apply_ablations(&mut cfg, ablation);
    let base = sampler_from_args(sampler, cfg.sampler)?;
    let explicit = sampler.sampler.is_some() || sampler.steps.is_some() || sampler.midpoint.is_some();
    let mut opts = EnhanceOptions::from_config(&cfg);
    opts.sampler = if explicit && cfg.ablation.use_flow && cfg.ablation.use_meanvalue {
        base
    } else {
        cfg.ablation.inference_sampler(base)
    };
    if let Some(s) = seed {
        opts.seed = s;
    }
    Ok(opts)
}

fn options_json(opts: &EnhanceOptions) -> serde_json::Value {
    serde_json::json!({
        "sampler": opts.sampler,
        "use_initial_stage": opts.use_initial_stage,
        "seed": opts.seed,
    })
}

fn cmd_enhance(a: &EnhanceArgs) -> CmdResult<Outcome> {
    let (model, cfg) = load_model(&a.checkpoint, a.tau_checkpoint.as_ref())?;
    let opts = enhance_options(&cfg, &a.sampler, &a.ablation, a.run.seed)?;
    let lq = load_image(&a.input)?;
    let res = pipeline::enhance(&model, &lq, &opts)?;
    save_png(&a.output, &res.image)?;
    let mut out = Outcome::new(options_json(&opts));
    out.seed = Some(opts.seed);
    out.evaluations = res.evaluations;
    out.outputs = vec![a.output.clone()];
    out.details = serde_json::json!({ "sampler": opts.sampler });
    Ok(out)
}

fn cmd_degrade(a: &DegradeArgs) -> CmdResult<Outcome> {
    use rand::SeedableRng;
    let spec = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            DegradationSpec::from_json(&text)?
        }
        None => DegradationSpec::default(),
    };
    let x = load_image(&a.input)?;
    let seed = a.run.seed.unwrap_or(0);
    let meta = match &a.replay {
        Some(p) => read_json(p)?,
        None => sample_meta(&x, &spec, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed))?,
    };
    let y = apply_meta(&x, &meta)?;
    save_png(&a.output, &y)?;
    let meta_path = a.meta.clone().unwrap_or_else(|| a.output.with_extension("json"));
    let meta_json = serde_json::to_string_pretty(&meta).map_err(anyhow::Error::from)?;
    std::fs::write(&meta_path, meta_json).with_context(|| format!("writing {}", meta_path.display()))?;
    let mut out = Outcome::new(serde_json::to_value(&spec).map_err(anyhow::Error::from)?);
    out.seed = Some(seed);
    out.outputs = vec![a.output.clone(), meta_path];
    Ok(out)
}

fn png_names(dir: &Path) -> anyhow::Result<BTreeSet<String>> {
    let mut names = BTreeSet::new();
    for e in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let p = e?.path();
        if p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")) {
            names.insert(p.file_name().unwrap().to_string_lossy().into_owned());
        }
    }
    Ok(names)
}

fn cmd_eval(a: &EvalArgs, exec: Exec) -> CmdResult<Outcome> {
    let report = match (&a.pred, &a.reference, &a.checkpoint) {
        (Some(pred), Some(reference), None) => {
            let p = png_names(pred)?;
            let r = png_names(reference)?;
            let missing_pred: Vec<_> = r.difference(&p).cloned().collect();
            let missing_ref: Vec<_> = p.difference(&r).cloned().collect();
            if !missing_pred.is_empty() || !missing_ref.is_empty() {
                let mut msg = String::from("prediction and reference sets differ");
                for m in &missing_pred {
                    msg.push_str(&format!("\n  missing from {}: {m}", pred.display()));
                }
                for m in &missing_ref {
                    msg.push_str(&format!("\n  missing from {}: {m}", reference.display()));
                }
                return Err(Failure::Runtime(anyhow!(msg)));
            }
            if p.is_empty() {
                return Err(Failure::Runtime(anyhow!("no PNG files in {}", pred.display())));
            }
            let start = Instant::now();
            let mut entries = vec![];
            for (id, name) in p.iter().enumerate() {
                let x = load_image(&pred.join(name))?;
                let y = load_image(&reference.join(name))?;
                entries.push(ImageMetrics {
                    id,
                    name: name.clone(),
                    psnr: psnr(&x, &y)?,
                    ssim: ssim(&x, &y)?,
                });
            }
            MetricReport::from_entries(entries, start.elapsed().as_secs_f64(), 0)?
        }
        (None, None, Some(ck)) => {
            let (model, cfg) = load_model(ck, a.tau_checkpoint.as_ref())?;
            let opts = enhance_options(&cfg, &a.sampler, &a.ablation, a.run.seed)?;
            let cfg = cfg.unwrap_or_default();
            let spec = match &a.config {
                Some(p) => {
                    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    DegradationSpec::from_json(&text)?
                }
                None => cfg.degradation.clone(),
            };
            let data = load_dataset(a.data_dir.as_deref().or(cfg.data.dir.as_deref()), &cfg)?;
            let items = eval_items(&data, Split::Test);
            let base = degraded_baseline(&items, &spec, cfg.eval_seed, exec)?;
            let report = evaluate(&model, &items, &spec, cfg.eval_seed, &opts, exec)?;
            eprintln!("degraded input mean PSNR {:.3} dB, SSIM {:.4}", base.mean_psnr, base.mean_ssim);
            report
        }
        _ => return Err(usage("give either --pred and --ref, or --checkpoint")),
    };
    print!("{}", report.table());
    let mut outputs = vec![];
    if let Some(p) = &a.report {
        let text = serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)?;
        std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
        outputs.push(p.clone());
    }
    let mut out = Outcome::new(serde_json::json!({
        "pred": a.pred, "ref": a.reference, "checkpoint": a.checkpoint, "seed": a.run.seed,
    }));
    out.seed = a.run.seed;
    out.evaluations = (report.evaluations_per_image * report.images as f64).round() as usize;
    out.outputs = outputs;
    out.details = serde_json::json!({ "mean_psnr": report.mean_psnr, "mean_ssim": report.mean_ssim, "images": report.images });
    Ok(out)
}

fn cmd_sweep(a: &SweepArgs, exec: Exec) -> CmdResult<Outcome> {
    let (model, cfg) = load_model(&a.checkpoint, a.tau_checkpoint.as_ref())?;
    let cfg = cfg.unwrap_or_default();
    let seed = a.run.seed.unwrap_or(cfg.eval_seed);
    let data = load_dataset(a.data_dir.as_deref().or(cfg.data.dir.as_deref()), &cfg)?;
    let mut ids = data.ids(Split::Val);
    if ids.is_empty() || a.data_dir.is_some() {
        ids = (0..data.len()).collect();
    }
    ids.truncate(a.images);
    let items = eval_items(&data, Split::Val);
    let items: Vec<_> = if items.is_empty() || a.data_dir.is_some() {
        ids.iter()
            .map(|&id| pipeline::EvalItem {
                id,
                name: data.records[id].name.clone(),
                clean: data.image(id).clone(),
            })
            .collect()
    } else {
        items.into_iter().take(a.images).collect()
    };
    let sweep_items = items
        .iter()
        .map(|it| {
            let lq = degraded_input(it, &cfg.degradation, seed)?;
            Ok(SweepItem {
                z0: start_noise(lq.shape(), pipeline::evaluate::item_seed(seed.wrapping_add(1), it.id)),
                cond: Some(model.guidance(&lq, cfg.ablation.use_initial_stage)?),
                reference: it.clean.clone(),
            })
        })
        .collect::<rectiflow::Result<Vec<_>>>()?;
    let field = model.field();
    let metric = |out: &Tensor, r: &Tensor| psnr(&out.clamp(0.0, 1.0), r);
    let sweep = sweep_midpoint(&field, &sweep_items, a.steps, metric, a.tie_tolerance, exec)?;
    println!("{:>4} {:>10} {:>6}", "k", "PSNR", "evals");
    for (k, s) in sweep.mean_scores.iter().enumerate() {
        let mark = if k == sweep.best { "  *" } else { "" };
        println!("{k:>4} {s:>10.3} {:>6}{mark}", k + 1);
    }
    let evaluations = sweep_items.len() * (1..=a.steps).sum::<usize>();
    let mut out = Outcome::new(serde_json::json!({ "checkpoint": a.checkpoint, "steps": a.steps, "images": items.len(), "seed": seed }));
    out.seed = Some(seed);
    out.evaluations = evaluations;
    out.details = serde_json::json!({ "best_midpoint": sweep.best, "mean_psnr": sweep.mean_scores });
    Ok(out)
}

fn cmd_bench(a: &BenchArgs, exec: Exec) -> CmdResult<Outcome> {
    let seed = a.run.seed.unwrap_or(0);
    let (model, cfg) = match &a.checkpoint {
        Some(p) => load_model(p, None)?,
        None => {
            let cfg = TrainConfig::default();
            (FlowModel::init(&cfg.model, &cfg.tau, seed)?, None)
        }
    };
    let cfg = cfg.unwrap_or_default();
    let data = toy_dataset(a.images, cfg.resolution, [0.0, 0.0, 1.0], seed)?;
    let items = eval_items(&data, Split::Test);
    let inputs = items
        .iter()
        .map(|it| degraded_input(it, &cfg.degradation, seed))
        .collect::<rectiflow::Result<Vec<_>>>()?;
    let mv = SamplerConfig::mean_value(a.steps, a.midpoint);
    let eu = SamplerConfig::euler(a.euler_steps);
    for s in [mv, eu] {
        s.validate().map_err(|e| usage(e.to_string()))?;
    }
    let opts = |sampler| EnhanceOptions {
        sampler,
        use_initial_stage: cfg.ablation.use_initial_stage,
        seed,
    };
    let t_mv = measure_throughput(&model, &inputs, &opts(mv), exec)?;
    let t_eu = measure_throughput(&model, &inputs, &opts(eu), exec)?;
    println!("{:<24} {:>8} {:>10} {:>12}", "sampler", "evals", "seconds", "images/s");
    for (name, t) in [(format!("meanvalue N={} k={}", a.steps, a.midpoint), &t_mv), (format!("euler N={}", a.euler_steps), &t_eu)] {
        println!("{name:<24} {:>8} {:>10.3} {:>12.2}", t.evaluations / t.images, t.seconds, t.images_per_second);
    }
    let ratio = t_mv.images_per_second / t_eu.images_per_second;
    println!("speed-up {ratio:.2}x");
    let mut out = Outcome::new(serde_json::json!({ "images": a.images, "meanvalue": mv, "euler": eu, "checkpoint": a.checkpoint, "seed": seed }));
    out.seed = Some(seed);
    out.evaluations = t_mv.evaluations + t_eu.evaluations;
    out.details = serde_json::json!({ "meanvalue": t_mv, "euler": t_eu, "speedup": ratio });
    Ok(out)
}

fn cmd_inspect(a: &InspectArgs) -> CmdResult<Outcome> {
    let ck = Checkpoint::load(&a.checkpoint).map_err(|e| Failure::Runtime(anyhow!("{}: {e}", a.checkpoint.display())))?;
    let desc = pipeline::persist::describe(&ck);
    println!("{}", serde_json::to_string_pretty(&desc).map_err(anyhow::Error::from)?);
    let out = Outcome::new(serde_json::json!({ "checkpoint": a.checkpoint }));
    Ok(out)
}

fn cmd_toy(a: &ToyArgs) -> CmdResult<Outcome> {
    if a.count == 0 || a.resolution == 0 {
        return Err(usage("--count and --resolution must be positive"));
    }
    let seed = a.run.seed.unwrap_or(0);
    let paths = pipeline::dataset::write_toy_corpus(&a.output, a.count, a.resolution, seed)?;
    let mut out = Outcome::new(serde_json::json!({ "count": a.count, "resolution": a.resolution, "seed": seed }));
    out.seed = Some(seed);
    out.outputs = vec![a.output.clone()];
    out.details = serde_json::json!({ "files": paths.len() });
    Ok(out)
}
