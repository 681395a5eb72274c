//! Command-line front end: configuration parsing/validation and the
//! subcommand handlers behind the `oscillode` binary.

use crate::averaging::TruncatedAveraging;
use crate::datagen::{build_dataset, read_dataset, write_dataset, InitialTimeMode, SamplingDomains};
use crate::error::{Error, Result};
use crate::experiments::{
    global_error_curve, learning_error_vs_eps, run_scheme, training_scale_study, ua_sweep,
    GridSpec, ScaleArm, Scheme,
};
use crate::integrators::{OneStepMethod, ReferenceSolverConfig};
use crate::micromacro::DecompositionProvider;
use crate::neuralnet::{load_checkpoint, NetMode, StructuredNetSet};
use crate::problems::OscillatoryProblem;
use crate::training::{train, TrainConfig};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Structured run parameters; every field is optional at parse time so that
/// validation can report the complete list of problems for a subcommand.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: Option<String>,
    pub method: Option<String>,
    pub mode: Option<String>,
    pub scheme: Option<String>,
    pub truncation_order: Option<usize>,
    pub h_range: Option<(f64, f64)>,
    pub eps_range: Option<(f64, f64)>,
    pub t_final: Option<f64>,
    pub h: Option<f64>,
    pub h_list: Option<Vec<f64>>,
    pub eps: Option<f64>,
    pub eps_list: Option<Vec<f64>>,
    pub y0: Option<Vec<f64>>,
    pub omega: Option<Vec<(f64, f64)>>,
    pub records: Option<usize>,
    pub train_fraction: Option<f64>,
    pub batch_size: Option<usize>,
    pub layers: Option<usize>,
    pub neurons: Option<usize>,
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub initial_time: Option<String>,
}

/// What a parsed config will be asked to drive; determines which fields are
/// required.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    GenData,
    Train,
    Integrate,
    Experiment,
}

const KNOWN_KEYS: &[&str] = &[
    "problem",
    "method",
    "mode",
    "scheme",
    "truncation_order",
    "h_range",
    "eps_range",
    "t_final",
    "h",
    "h_list",
    "eps",
    "eps_list",
    "y0",
    "omega",
    "records",
    "train_fraction",
    "batch_size",
    "layers",
    "neurons",
    "learning_rate",
    "weight_decay",
    "epochs",
    "seed",
    "initial_time",
];

impl RunConfig {
    /// Reads a JSON config and validates it for `task`, reporting every
    /// violation rather than stopping at the first.
    pub fn parse_and_validate(path: &Path, task: Task) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_and_validate_str(&text, task)
    }

    pub fn parse_and_validate_str(text: &str, task: Task) -> Result<RunConfig> {
        let text = if text.trim().is_empty() { "{}" } else { text };
        let value: serde_json::Value = serde_json::from_str(text)?;
        let mut problems = Vec::new();
        if let Some(map) = value.as_object() {
            for key in map.keys() {
                if !KNOWN_KEYS.contains(&key.as_str()) {
                    problems.push(format!("unknown key `{key}`"));
                }
            }
        } else {
            problems.push("config must be a JSON object".to_string());
        }
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }
        let config: RunConfig = serde_json::from_value(value)?;
        config.validate(task)?;
        Ok(config)
    }

    pub fn validate(&self, task: Task) -> Result<()> {
        let mut problems = Vec::new();
        self.check_present_fields(&mut problems);
        self.check_required(task, &mut problems);
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    fn check_present_fields(&self, problems: &mut Vec<String>) {
        let mut dim = None;
        if let Some(name) = &self.problem {
            match OscillatoryProblem::by_name(name) {
                Ok(p) => dim = Some(p.dimension()),
                Err(_) => problems.push(format!("problem: unknown identifier `{name}`")),
            }
        }
        if let Some(m) = &self.method {
            if OneStepMethod::by_name(m).is_err() {
                problems.push(format!("method: expected euler or midpoint, got `{m}`"));
            }
        }
        if let Some(m) = &self.mode {
            if NetMode::by_name(m).is_err() {
                problems.push(format!("mode: expected classical or autonomous, got `{m}`"));
            }
        }
        if let Some(s) = &self.scheme {
            if Scheme::by_name(s).is_err() {
                problems.push(format!(
                    "scheme: expected slowfast, micromacro or auto-alt, got `{s}`"
                ));
            }
        }
        if let Some(k) = self.truncation_order {
            if k > 1 {
                problems.push(format!("truncation_order: only 0 and 1 supported, got {k}"));
            }
        }
        for (name, range) in [("h_range", self.h_range), ("eps_range", self.eps_range)] {
            if let Some((lo, hi)) = range {
                if !(lo > 0.0 && hi > lo && hi.is_finite()) {
                    problems.push(format!("{name}: need 0 < low < high, got ({lo}, {hi})"));
                }
            }
        }
        for (name, v) in [("t_final", self.t_final), ("h", self.h)] {
            if let Some(v) = v {
                if !(v > 0.0) || !v.is_finite() {
                    problems.push(format!("{name}: must be positive and finite, got {v}"));
                }
            }
        }
        if let Some(eps) = self.eps {
            if !(eps > 0.0 && eps <= 1.0) {
                problems.push(format!("eps: must lie in (0, 1], got {eps}"));
            }
        }
        for (name, list) in [("h_list", &self.h_list), ("eps_list", &self.eps_list)] {
            if let Some(list) = list {
                if list.is_empty() {
                    problems.push(format!("{name}: must be nonempty"));
                } else if list.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                    problems.push(format!("{name}: entries must be positive and finite"));
                }
            }
        }
        if let Some(list) = &self.eps_list {
            if list.iter().any(|e| *e > 1.0) {
                problems.push("eps_list: entries must lie in (0, 1]".to_string());
            }
        }
        if let (Some(d), Some(y0)) = (dim, &self.y0) {
            if y0.len() != d {
                problems.push(format!("y0: expected {d} components, got {}", y0.len()));
            }
        }
        if let Some(y0) = &self.y0 {
            if y0.iter().any(|v| !v.is_finite()) {
                problems.push("y0: components must be finite".to_string());
            }
        }
        if let Some(omega) = &self.omega {
            if let Some(d) = dim {
                if omega.len() != d {
                    problems.push(format!("omega: expected {d} axes, got {}", omega.len()));
                }
            }
            if omega.iter().any(|(lo, hi)| !(lo < hi) || !hi.is_finite()) {
                problems.push("omega: each axis needs low < high, finite".to_string());
            }
        }
        if let Some(k) = self.records {
            if k < 2 {
                problems.push(format!("records: need at least 2, got {k}"));
            }
        }
        if let Some(f) = self.train_fraction {
            // the dataset layout fixes the 4/5 split; the field exists so
            // presets can state it explicitly
            if (f - 0.8).abs() > 1e-12 {
                problems.push(format!("train_fraction: only 0.8 is supported, got {f}"));
            }
        }
        for (name, v) in [("batch_size", self.batch_size), ("epochs", self.epochs)] {
            if let Some(v) = v {
                if v == 0 {
                    problems.push(format!("{name}: must be positive"));
                }
            }
        }
        for (name, v) in [("layers", self.layers), ("neurons", self.neurons)] {
            if let Some(v) = v {
                if v == 0 {
                    problems.push(format!("{name}: must be positive"));
                }
            }
        }
        if let Some(lr) = self.learning_rate {
            if lr < 0.0 || !lr.is_finite() {
                problems.push(format!("learning_rate: must be >= 0 and finite, got {lr}"));
            }
        }
        if let Some(wd) = self.weight_decay {
            if wd < 0.0 || !wd.is_finite() {
                problems.push(format!("weight_decay: must be >= 0 and finite, got {wd}"));
            }
        }
        if let Some(mode) = &self.initial_time {
            if mode != "uniform-phase" && mode != "zero" {
                problems.push(format!(
                    "initial_time: expected uniform-phase or zero, got `{mode}`"
                ));
            }
        }
    }

    fn check_required(&self, task: Task, problems: &mut Vec<String>) {
        let mut need = |name: &str, present: bool| {
            if !present {
                problems.push(format!("missing required: {name}"));
            }
        };
        need("problem", self.problem.is_some());
        match task {
            Task::GenData => {
                need("records", self.records.is_some());
                need("seed", self.seed.is_some());
            }
            Task::Train => {
                need("method", self.method.is_some());
                need("batch_size", self.batch_size.is_some());
                need("layers", self.layers.is_some());
                need("neurons", self.neurons.is_some());
                need("learning_rate", self.learning_rate.is_some());
                need("weight_decay", self.weight_decay.is_some());
                need("epochs", self.epochs.is_some());
                need("seed", self.seed.is_some());
            }
            Task::Integrate => {
                need("scheme", self.scheme.is_some());
                need("t_final", self.t_final.is_some());
                need("h", self.h.is_some());
                need("eps", self.eps.is_some());
                need("y0", self.y0.is_some());
            }
            Task::Experiment => {
                need("t_final", self.t_final.is_some());
                need("h_list", self.h_list.is_some());
                need("eps_list", self.eps_list.is_some());
                need("y0", self.y0.is_some());
            }
        }
    }

    pub fn problem(&self) -> Result<OscillatoryProblem> {
        OscillatoryProblem::by_name(self.problem.as_deref().unwrap_or_default())
    }

    pub fn method(&self) -> Result<OneStepMethod> {
        OneStepMethod::by_name(self.method.as_deref().unwrap_or("euler"))
    }

    pub fn mode(&self) -> Result<NetMode> {
        NetMode::by_name(self.mode.as_deref().unwrap_or("classical"))
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        vec![self.neurons.unwrap_or(32); self.layers.unwrap_or(1)]
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "oscillode",
    about = "Learned slow-fast decompositions for highly oscillatory ODEs",
    version
)]
pub struct Cli {
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample (t0, y0, h, eps) tuples and solve each to high accuracy.
    GenData(GenDataArgs),
    /// Fit the structured network set on a generated dataset.
    Train(TrainArgs),
    /// Integrate one trajectory with a learned or exact decomposition.
    Integrate(IntegrateArgs),
    /// Run a measurement campaign and emit CSV tables (and SVG charts).
    Experiment(ExperimentArgs),
    /// Print checkpoint metadata.
    InspectCkpt(InspectArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// JSON config supplying any parameter not given as a flag.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub problem: Option<String>,
    #[arg(long, short = 'K')]
    pub records: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Step-size sampling interval, as `low,high`.
    #[arg(long, value_parser = parse_pair)]
    pub h_range: Option<(f64, f64)>,
    /// Oscillation-parameter sampling interval, as `low,high`.
    #[arg(long, value_parser = parse_pair)]
    pub eps_range: Option<(f64, f64)>,
    /// Sampling box, one `low,high` pair per axis joined by `;`.
    #[arg(long)]
    pub omega: Option<BoxArg>,
    /// Start every record at time 0 instead of a uniform random phase.
    #[arg(long)]
    pub zero_initial_time: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, short = 'B')]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub wd: Option<f64>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub neurons: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    /// Continue from a last-epoch checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct IntegrateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Trained checkpoint; mutually exclusive with --exact.
    #[arg(long, conflicts_with = "exact")]
    pub ckpt: Option<PathBuf>,
    /// Use the analytic truncation of this order instead of a checkpoint.
    #[arg(long)]
    pub exact: Option<usize>,
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(long)]
    pub problem: Option<String>,
    /// Initial state, comma-separated.
    #[arg(long)]
    pub y0: Option<VectorArg>,
    #[arg(long, short = 'T')]
    pub t_final: Option<f64>,
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    /// learning-error, error-curve, ua, or scale-study.
    pub kind: String,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, conflicts_with = "exact")]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub exact: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Skip SVG chart emission.
    #[arg(long)]
    pub no_svg: bool,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
}

/// Comma-separated vector flag (clap would otherwise read a bare `Vec` as a
/// repeated flag).
#[derive(Debug, Clone)]
pub struct VectorArg(pub Vec<f64>);

impl std::str::FromStr for VectorArg {
    type Err = String;
    fn from_str(text: &str) -> std::result::Result<Self, String> {
        parse_vector(text).map(Self)
    }
}

/// Semicolon-separated list of `low,high` pairs.
#[derive(Debug, Clone)]
pub struct BoxArg(pub Vec<(f64, f64)>);

impl std::str::FromStr for BoxArg {
    type Err = String;
    fn from_str(text: &str) -> std::result::Result<Self, String> {
        parse_box(text).map(Self)
    }
}

fn parse_pair(text: &str) -> std::result::Result<(f64, f64), String> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected `low,high`, got `{text}`"));
    }
    let lo: f64 = parts[0].trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = parts[1].trim().parse().map_err(|e| format!("{e}"))?;
    Ok((lo, hi))
}

fn parse_box(text: &str) -> std::result::Result<Vec<(f64, f64)>, String> {
    text.split(';').map(parse_pair).collect()
}

fn parse_vector(text: &str) -> std::result::Result<Vec<f64>, String> {
    text.split(',')
        .map(|p| p.trim().parse().map_err(|e| format!("{e}")))
        .collect()
}

fn load_config(path: &Option<PathBuf>, task: Task) -> Result<RunConfig> {
    match path {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let text = if text.trim().is_empty() { "{}" } else { &text };
            let value: serde_json::Value = serde_json::from_str(text)?;
            let mut problems = Vec::new();
            if let Some(map) = value.as_object() {
                for key in map.keys() {
                    if !KNOWN_KEYS.contains(&key.as_str()) {
                        problems.push(format!("unknown key `{key}`"));
                    }
                }
            } else {
                problems.push("config must be a JSON object".to_string());
            }
            if !problems.is_empty() {
                return Err(Error::Validation(problems));
            }
            let _ = task;
            Ok(serde_json::from_value(value)?)
        }
        None => Ok(RunConfig::default()),
    }
}

/// Timestamps and durations live next to the artifact so the artifact itself
/// stays byte-identical across reruns.
fn write_sidecar(artifact: &Path, started: Instant) -> Result<()> {
    let now = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let text = format!(
        "completed_at_unix={now}\nduration_seconds={:.3}\n",
        started.elapsed().as_secs_f64()
    );
    let mut name = artifact
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "artifact".to_string());
    name.push_str(".meta");
    let path = artifact.with_file_name(name);
    let tmp = path.with_extension("meta.tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, &path)?;
    Ok(())
}

/// Entry point for the binary; returns the process exit code.
pub fn main_with(cli: Cli) -> i32 {
    if let Some(threads) = cli.threads {
        // a failure here only means a pool already exists (tests); keep going
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match run(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

/// Executes one subcommand; on success returns the key=value summary line.
pub fn run(command: Command) -> Result<String> {
    match command {
        Command::GenData(args) => run_gen_data(args),
        Command::Train(args) => run_train(args),
        Command::Integrate(args) => run_integrate(args),
        Command::Experiment(args) => run_experiment(args),
        Command::InspectCkpt(args) => run_inspect(args),
    }
}

fn run_gen_data(args: GenDataArgs) -> Result<String> {
    let started = Instant::now();
    let mut cfg = load_config(&args.config, Task::GenData)?;
    if args.problem.is_some() {
        cfg.problem = args.problem.clone();
    }
    if args.records.is_some() {
        cfg.records = args.records;
    }
    if args.seed.is_some() {
        cfg.seed = args.seed;
    }
    if args.h_range.is_some() {
        cfg.h_range = args.h_range;
    }
    if args.eps_range.is_some() {
        cfg.eps_range = args.eps_range;
    }
    if let Some(omega) = &args.omega {
        cfg.omega = Some(omega.0.clone());
    }
    if args.zero_initial_time {
        cfg.initial_time = Some("zero".to_string());
    }
    cfg.validate(Task::GenData)?;

    let problem = cfg.problem()?;
    let t0_mode = match cfg.initial_time.as_deref() {
        Some("zero") => InitialTimeMode::Zero,
        _ => InitialTimeMode::UniformPhase,
    };
    let mut domains = SamplingDomains::standard(problem.dimension(), t0_mode, cfg.seed.unwrap());
    if let Some(omega) = cfg.omega.clone() {
        domains.omega = omega;
    }
    if let Some(r) = cfg.h_range {
        domains.h_range = r;
    }
    if let Some(r) = cfg.eps_range {
        domains.eps_range = r;
    }
    let records = cfg.records.unwrap();
    let dataset = build_dataset(problem, &domains, records, &ReferenceSolverConfig::default())?;
    write_dataset(&args.out, &dataset)?;
    write_sidecar(&args.out, started)?;
    Ok(format!(
        "subcommand=gen-data problem={} records={} seed={} out={}",
        problem.name(),
        records,
        domains.seed,
        args.out.display()
    ))
}

fn run_train(args: TrainArgs) -> Result<String> {
    let started = Instant::now();
    let mut cfg = load_config(&args.config, Task::Train)?;
    if args.mode.is_some() {
        cfg.mode = args.mode.clone();
    }
    if args.method.is_some() {
        cfg.method = args.method.clone();
    }
    if args.epochs.is_some() {
        cfg.epochs = args.epochs;
    }
    if args.batch.is_some() {
        cfg.batch_size = args.batch;
    }
    if args.lr.is_some() {
        cfg.learning_rate = args.lr;
    }
    if args.wd.is_some() {
        cfg.weight_decay = args.wd;
    }
    if args.layers.is_some() {
        cfg.layers = args.layers;
    }
    if args.neurons.is_some() {
        cfg.neurons = args.neurons;
    }
    if args.seed.is_some() {
        cfg.seed = args.seed;
    }

    let dataset = read_dataset(&args.data)?;
    if cfg.problem.is_none() {
        cfg.problem = Some(dataset.problem.name().to_string());
    }
    cfg.validate(Task::Train)?;
    if dataset.problem.name() != cfg.problem.as_deref().unwrap() {
        return Err(Error::Validation(vec![format!(
            "problem: config says {} but dataset holds {}",
            cfg.problem.as_deref().unwrap(),
            dataset.problem.name()
        )]));
    }
    let learning_rate = cfg.learning_rate.unwrap();
    if learning_rate == 0.0 {
        eprintln!("warning: learning_rate=0, parameters will not move");
    }

    let mode = cfg.mode()?;
    let hidden = cfg.hidden_widths();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.unwrap());
    let model = match mode {
        NetMode::Classical => StructuredNetSet::classical(dataset.problem, &hidden, &mut rng),
        NetMode::Autonomous => StructuredNetSet::autonomous(dataset.problem, &hidden, &mut rng),
    };
    let train_cfg = TrainConfig {
        batch_size: cfg.batch_size.unwrap(),
        epochs: cfg.epochs.unwrap(),
        learning_rate,
        weight_decay: cfg.weight_decay.unwrap(),
        method: cfg.method()?,
        mode,
        seed: cfg.seed.unwrap(),
        checkpoint_path: Some(args.out.clone()),
        loss_csv_path: args.loss_csv.clone(),
        resume_from: args.resume.clone(),
    };
    let (_, report) = train(model, &dataset, &train_cfg)?;
    write_sidecar(&args.out, started)?;
    Ok(format!(
        "subcommand=train problem={} mode={} epochs={} loss_train={:.6e} loss_test={:.6e} out={}",
        dataset.problem.name(),
        mode.name(),
        train_cfg.epochs,
        report.train.last().copied().unwrap_or(f64::NAN),
        report.test.last().copied().unwrap_or(f64::NAN),
        args.out.display()
    ))
}

fn provider_from(
    ckpt: &Option<PathBuf>,
    exact: Option<usize>,
    problem: Option<OscillatoryProblem>,
    eps: f64,
) -> Result<DecompositionProvider> {
    match (ckpt, exact) {
        (Some(path), None) => {
            let model = load_checkpoint(path)?.to_model()?;
            if let Some(p) = problem {
                if model.problem != p {
                    return Err(Error::Validation(vec![format!(
                        "problem: config says {} but checkpoint holds {}",
                        p.name(),
                        model.problem.name()
                    )]));
                }
            }
            Ok(DecompositionProvider::Learned(model))
        }
        (None, Some(order)) => {
            let problem = problem.ok_or_else(|| {
                Error::Validation(vec!["missing required: problem".to_string()])
            })?;
            Ok(DecompositionProvider::Exact(TruncatedAveraging::new(
                order, problem, eps,
            )?))
        }
        _ => Err(Error::Validation(vec![
            "exactly one of --ckpt and --exact is required".to_string(),
        ])),
    }
}

fn run_integrate(args: IntegrateArgs) -> Result<String> {
    let started = Instant::now();
    let mut cfg = load_config(&args.config, Task::Integrate)?;
    if args.scheme.is_some() {
        cfg.scheme = args.scheme.clone();
    }
    if args.problem.is_some() {
        cfg.problem = args.problem.clone();
    }
    if let Some(y0) = &args.y0 {
        cfg.y0 = Some(y0.0.clone());
    }
    if args.t_final.is_some() {
        cfg.t_final = args.t_final;
    }
    if args.h.is_some() {
        cfg.h = args.h;
    }
    if args.eps.is_some() {
        cfg.eps = args.eps;
    }
    if args.method.is_some() {
        cfg.method = args.method.clone();
    }
    if cfg.problem.is_none() {
        if let Some(path) = &args.ckpt {
            cfg.problem = Some(load_checkpoint(path)?.problem);
        }
    }
    cfg.validate(Task::Integrate)?;

    let eps = cfg.eps.unwrap();
    let scheme = Scheme::by_name(cfg.scheme.as_deref().unwrap())?;
    let provider = provider_from(&args.ckpt, args.exact, Some(cfg.problem()?), eps)?;
    let method = cfg.method()?;
    let traj = run_scheme(
        &provider,
        scheme,
        cfg.y0.as_deref().unwrap(),
        cfg.t_final.unwrap(),
        cfg.h.unwrap(),
        eps,
        &method,
    )?;

    let d = traj.states[0].len();
    let mut csv = String::from("t");
    for i in 0..d {
        let _ = write!(csv, ",y{i}");
    }
    if traj.macro_states.is_some() && traj.micro_states.is_some() {
        for i in 0..d {
            let _ = write!(csv, ",v{i}");
        }
        for i in 0..d {
            let _ = write!(csv, ",w{i}");
        }
    }
    csv.push('\n');
    for (n, t) in traj.times.iter().enumerate() {
        let _ = write!(csv, "{t:.16e}");
        for v in &traj.states[n] {
            let _ = write!(csv, ",{v:.16e}");
        }
        if let (Some(vs), Some(ws)) = (&traj.macro_states, &traj.micro_states) {
            for v in vs[n].iter().chain(&ws[n]) {
                let _ = write!(csv, ",{v:.16e}");
            }
        }
        csv.push('\n');
    }
    let tmp = args.out.with_extension("tmp");
    std::fs::write(&tmp, csv)?;
    std::fs::rename(&tmp, &args.out)?;
    write_sidecar(&args.out, started)?;
    Ok(format!(
        "subcommand=integrate scheme={} provider={} steps={} eps={} out={}",
        scheme.name(),
        provider.variant_name(),
        traj.times.len() - 1,
        eps,
        args.out.display()
    ))
}

fn run_experiment(args: ExperimentArgs) -> Result<String> {
    let started = Instant::now();
    let cfg = RunConfig::parse_and_validate(&args.config, Task::Experiment)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let problem = cfg.problem()?;
    let method = cfg.method()?;
    let y0 = cfg.y0.clone().unwrap();
    let horizon = cfg.t_final.unwrap();
    let h_list = cfg.h_list.clone().unwrap();
    let eps_list = cfg.eps_list.clone().unwrap();
    let order = cfg.truncation_order.unwrap_or(1);

    let emit = |name: &str, table: &crate::experiments::ErrorTable| -> Result<PathBuf> {
        let csv_path = args.out_dir.join(format!("{name}.csv"));
        table.write_csv(&csv_path)?;
        if !args.no_svg {
            let svg_path = args.out_dir.join(format!("{name}.svg"));
            if let Err(err) = table.write_svg(&svg_path, name) {
                eprintln!("warning: chart {name}.svg not written: {err}");
            }
        }
        Ok(csv_path)
    };

    let summary = match args.kind.as_str() {
        "learning-error" => {
            let path = args.ckpt.as_ref().ok_or_else(|| {
                Error::Validation(vec!["learning-error needs --ckpt".to_string()])
            })?;
            let model = load_checkpoint(path)?.to_model()?;
            let grid = GridSpec {
                eps_list: eps_list.clone(),
                h_list: h_list.clone(),
                ..GridSpec::standard(eps_list, h_list)
            };
            let table = learning_error_vs_eps(&model, &grid, order)?;
            let out = emit("learning-error", &table)?;
            format!("subcommand=experiment kind=learning-error out={}", out.display())
        }
        "error-curve" => {
            let scheme = Scheme::by_name(cfg.scheme.as_deref().unwrap_or("micromacro"))?;
            let provider = provider_from(&args.ckpt, args.exact, Some(problem), eps_list[0])?;
            let table = global_error_curve(
                &provider, scheme, &y0, horizon, &h_list, &eps_list, &method,
            )?;
            let out = emit("error-curve", &table)?;
            format!(
                "subcommand=experiment kind=error-curve scheme={} out={}",
                scheme.name(),
                out.display()
            )
        }
        "ua" => {
            let scheme = Scheme::by_name(cfg.scheme.as_deref().unwrap_or("micromacro"))?;
            let provider = provider_from(&args.ckpt, args.exact, Some(problem), eps_list[0])?;
            let table = ua_sweep(&provider, scheme, &y0, horizon, &h_list, &eps_list, &method)?;
            let out = emit("ua", &table)?;
            format!(
                "subcommand=experiment kind=ua scheme={} out={}",
                scheme.name(),
                out.display()
            )
        }
        "scale-study" => {
            let seed = cfg.seed.ok_or_else(|| {
                Error::Validation(vec!["missing required: seed".to_string()])
            })?;
            let domains = SamplingDomains::standard(
                problem.dimension(),
                InitialTimeMode::UniformPhase,
                seed,
            );
            let base = TrainConfig {
                batch_size: cfg.batch_size.unwrap_or(100),
                epochs: cfg.epochs.unwrap_or(10),
                learning_rate: cfg.learning_rate.unwrap_or(2e-3),
                weight_decay: cfg.weight_decay.unwrap_or(1e-9),
                method: method.clone(),
                mode: NetMode::Classical,
                seed,
                checkpoint_path: None,
                loss_csv_path: None,
                resume_from: None,
            };
            // the coarse arm mirrors the small-budget side of the published
            // comparison: 800 records, one hidden layer of 25
            let coarse = ScaleArm {
                record_count: 800,
                hidden: vec![25],
                train_config: base.clone(),
            };
            let fine = ScaleArm {
                record_count: cfg.records.unwrap_or(5000),
                hidden: cfg.hidden_widths(),
                train_config: base,
            };
            let study = training_scale_study(
                problem, &domains, &coarse, &fine, &y0, horizon, &h_list, &eps_list,
            )?;
            emit("scale-coarse", &study.coarse)?;
            let out = emit("scale-fine", &study.fine)?;
            format!(
                "subcommand=experiment kind=scale-study fine_wins={} comparable={} out={}",
                study.fine_wins,
                study.comparable_cells,
                out.display()
            )
        }
        other => {
            return Err(Error::Validation(vec![format!(
                "unknown experiment kind `{other}` (expected learning-error, error-curve, ua, scale-study)"
            )]))
        }
    };
    write_sidecar(&args.out_dir.join("run"), started)?;
    Ok(summary)
}

fn run_inspect(args: InspectArgs) -> Result<String> {
    let ckpt = load_checkpoint(&args.ckpt)?;
    let params: usize = ckpt.params.iter().map(Vec::len).sum();
    let widths: Vec<String> = ckpt
        .widths
        .iter()
        .map(|w| {
            w.iter()
                .map(|n| n.to_string())
                .collect::<Vec<_>>()
                .join("-")
        })
        .collect();
    Ok(format!(
        "subcommand=inspect-ckpt format={} problem={} mode={} nets={} widths={} params={} epoch={} loss_train={:.6e} loss_test={:.6e}",
        ckpt.format,
        ckpt.problem,
        ckpt.mode,
        ckpt.widths.len(),
        widths.join("|"),
        params,
        ckpt.epoch,
        ckpt.loss_train,
        ckpt.loss_test
    ))
}
