//! Command implementations behind the `contour` binary.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use contour_core::dataset::{generate_dataset, load_dataset, write_dataset, DatasetConfig, DatasetKind, MANIFEST_FILE};
use contour_core::engine::{complete, estimate_gamma, gamma_from_ground_truth, RunConfig};
use contour_core::harness::{
    self, gamma_gap_correlation, run_comparison, sweep_alpha, sweep_receptive_field, write_csv, write_json, RfConfig,
};
use contour_core::image::BinaryImage;
use contour_core::Error;
use serde::{Deserialize, Serialize};

/// Environment variable holding the default worker count for experiments.
pub const WORKERS_ENV: &str = "CONTOUR_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "contour", version, about = "Single-image contour completion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a procedural shape dataset.
    Generate(GenerateArgs),
    /// Complete one fragmented contour image.
    Complete(CompleteArgs),
    /// Run one of the experiments on a generated dataset.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_parser = parse_kind)]
    pub dataset: Option<DatasetKind>,
    #[arg(long)]
    pub count: Option<usize>,
    /// Canvas side in pixels.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub stroke_width: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON file with a `dataset` section.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gamma {
    Auto,
    Value(f64),
}

impl std::str::FromStr for Gamma {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(Gamma::Auto);
        }
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() && v >= 0.0 => Ok(Gamma::Value(v)),
            _ => Err(format!("expected a non-negative number or `auto`, got {s:?}")),
        }
    }
}

#[derive(Debug, Args)]
pub struct CompleteArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Ground truth for evaluation and for `--gamma auto`.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Target overfit score, or `auto`.
    #[arg(long)]
    pub gamma: Option<Gamma>,
    /// Estimated gap fraction used by `--gamma auto` without ground truth.
    #[arg(long)]
    pub gap_guess: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Write this many evenly spaced snapshots plus a strip of them.
    #[arg(long)]
    pub emit_frames: Option<usize>,
    /// JSON file with `run` and `complete` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Comparison,
    Alpha,
    Correlation,
    Rf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset directory containing a manifest.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum)]
    pub experiment: Experiment,
    #[arg(long)]
    pub iters: Option<usize>,
    /// Use only the first N samples.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Skip samples whose gap fraction exceeds this value.
    #[arg(long)]
    pub max_gap: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub kernels: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub gap_lengths: Option<Vec<usize>>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// JSON file with `run` and `eval` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_kind(s: &str) -> Result<DatasetKind, String> {
    s.parse()
}

/// Per-command settings beyond the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompleteSettings {
    pub gamma: Gamma,
    pub gap_guess: Option<f64>,
    pub emit_frames: usize,
}

impl Default for CompleteSettings {
    fn default() -> Self {
        CompleteSettings {
            gamma: Gamma::Auto,
            gap_guess: None,
            emit_frames: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub limit: Option<usize>,
    pub max_gap: Option<f64>,
    pub alphas: Vec<f64>,
    pub kernels: Vec<usize>,
    pub gap_lengths: Vec<usize>,
    pub trials: usize,
    pub gaps_per_shape: usize,
    pub workers: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            limit: None,
            max_gap: None,
            alphas: vec![0.0, 0.05, 0.1, 0.15, 0.5, 0.95, 1.0],
            kernels: vec![3, 5, 7],
            gap_lengths: vec![4, 8, 12],
            trials: 10,
            gaps_per_shape: 2,
            workers: 1,
        }
    }
}

/// Everything a command reads from its JSON config file. Unknown keys are
/// rejected; flags override file values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub run: RunConfig,
    pub dataset: DatasetConfig,
    pub complete: CompleteSettings,
    pub eval: EvalSettings,
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(CliConfig::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
    }
}

/// A command failure with its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Dimensions { .. } | Error::OutOfCanvas { .. } | Error::Infeasible(_) => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Complete(a) => cmd_complete(&a).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a),
    }
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::runtime(format!("{}: {e}", dir.display())))
}

fn echo_config<T: Serialize>(dir: &Path, value: &T) -> Result<(), Failure> {
    Ok(write_json(&dir.join("config.json"), value)?)
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<(), Failure> {
    let mut cfg = CliConfig::load(a.config.as_deref())?.dataset;
    if let Some(kind) = a.dataset {
        cfg.kind = kind;
    }
    if let Some(v) = a.count {
        cfg.count = v;
    }
    if let Some(v) = a.size {
        cfg.canvas = v;
    }
    if let Some(v) = a.stroke_width {
        cfg.stroke_width = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if cfg.count == 0 {
        return Err(Failure::usage("--count must be at least 1"));
    }
    cfg.validate()?;
    create_dir(&a.out)?;
    let samples = generate_dataset(&cfg)?;
    let dir = write_dataset(&a.out, &cfg, &samples)?;
    echo_config(&a.out, &cfg)?;
    eprintln!("wrote {} samples to {}", samples.len(), dir.display());
    Ok(())
}

/// Effective settings of one completion, echoed as `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompleteEcho {
    pub input: PathBuf,
    pub gt: Option<PathBuf>,
    pub run: RunConfig,
    pub complete: CompleteSettings,
    /// γ actually used and where it came from.
    pub gamma_used: f64,
    pub gamma_source: String,
    pub input_size: (usize, usize),
    pub padded_size: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompleteEval {
    pub mse: f64,
    pub iou: f64,
    pub raw_mse: f64,
    pub raw_iou: f64,
    pub best_iteration: usize,
    pub best_delta: f64,
}

pub struct CompleteOutcome {
    pub output: BinaryImage,
    pub eval: Option<CompleteEval>,
    pub echo: CompleteEcho,
}

fn resolve_gamma(
    settings: &CompleteSettings,
    fallback: f64,
    gt: Option<&BinaryImage>,
    input: &BinaryImage,
    run: &RunConfig,
) -> Result<(f64, String), Failure> {
    match settings.gamma {
        Gamma::Value(v) => Ok((v, "flag".into())),
        Gamma::Auto => {
            if let Some(gt) = gt {
                return Ok((gamma_from_ground_truth(gt, input, &run.scores)?, "ground_truth".into()));
            }
            match settings.gap_guess {
                Some(g) if (0.0..=1.0).contains(&g) => Ok((estimate_gamma(g), "gap_guess".into())),
                Some(g) => Err(Failure::usage(format!("--gap-guess must lie in [0, 1], got {g}"))),
                None => {
                    eprintln!(
                        "warning: no ground truth or gap estimate for --gamma auto; using configured gamma {fallback}"
                    );
                    Ok((fallback, "config_default".into()))
                }
            }
        }
    }
}

pub fn cmd_complete(a: &CompleteArgs) -> Result<CompleteOutcome, Failure> {
    let file = CliConfig::load(a.config.as_deref())?;
    let mut run = file.run;
    let mut settings = file.complete;
    if let Some(v) = a.alpha {
        run.energy.alpha = v;
    }
    if let Some(v) = a.iters {
        run.max_iterations = v;
    }
    if let Some(v) = a.seed {
        run.seed = v;
    }
    if let Some(v) = a.learning_rate {
        run.learning_rate = v;
    }
    if let Some(v) = a.gamma {
        settings.gamma = v;
    }
    if a.gap_guess.is_some() {
        settings.gap_guess = a.gap_guess;
    }
    if let Some(v) = a.emit_frames {
        settings.emit_frames = v;
    }
    run.validate()?;

    let thr = run.scores.binarize_threshold;
    let input = BinaryImage::load_png(&a.input)?.binarize(thr);
    let gt =
        a.gt.as_ref()
            .map(|p| BinaryImage::load_png(p).map(|g| g.binarize(thr)))
            .transpose()?;
    if let Some(gt) = &gt {
        input.check_same_dims(gt)?;
    }
    let (gamma, source) = resolve_gamma(&settings, run.scores.gamma, gt.as_ref(), &input, &run)?;
    run.scores.gamma = gamma;
    if settings.emit_frames > 0 {
        run.snapshot_every = run.max_iterations.div_ceil(settings.emit_frames).max(1);
    }

    let (padded, (h, w)) = input.pad_to_multiple(run.generator.size_multiple());
    let echo = CompleteEcho {
        input: a.input.clone(),
        gt: a.gt.clone(),
        run: run.clone(),
        complete: settings.clone(),
        gamma_used: gamma,
        gamma_source: source,
        input_size: (h, w),
        padded_size: padded.dims(),
    };
    create_dir(&a.out)?;
    echo_config(&a.out, &echo)?;

    let completion = complete(&padded, &run)?;
    let output = completion.best_output.crop(h, w);
    output.save_png(a.out.join("completed.png"))?;
    let trace_path = a.out.join("trace.csv");
    let file = fs::File::create(&trace_path).map_err(|e| Failure::runtime(format!("{}: {e}", trace_path.display())))?;
    completion.trace.write_csv(file)?;

    if settings.emit_frames > 0 {
        let frames: Vec<BinaryImage> = completion.trace.frames.iter().map(|(_, f)| f.crop(h, w)).collect();
        let dir = a.out.join("frames");
        create_dir(&dir)?;
        for ((it, _), f) in completion.trace.frames.iter().zip(&frames) {
            f.save_png(dir.join(format!("frame_{it:05}.png")))?;
        }
        if !frames.is_empty() {
            strip(&frames).save_png(a.out.join("evolution.png"))?;
        }
    }

    let eval = gt
        .as_ref()
        .map(|gt| -> Result<CompleteEval, Failure> {
            Ok(CompleteEval {
                mse: harness::mse(&output, gt)?,
                iou: harness::iou(&output, gt, thr)?,
                raw_mse: harness::mse(&input, gt)?,
                raw_iou: harness::iou(&input, gt, thr)?,
                best_iteration: completion.trace.best_iteration,
                best_delta: completion.trace.best_delta,
            })
        })
        .transpose()?;
    if let Some(e) = &eval {
        write_json(&a.out.join("eval.json"), e)?;
    }
    eprintln!(
        "best iteration {} (δ = {:.3}), wrote {}",
        completion.trace.best_iteration,
        completion.trace.best_delta,
        a.out.display()
    );
    Ok(CompleteOutcome { output, eval, echo })
}

/// Frames side by side with a one-pixel dark separator.
fn strip(frames: &[BinaryImage]) -> BinaryImage {
    let (h, w) = frames[0].dims();
    let total = frames.len() * (w + 1) - 1;
    let mut out = BinaryImage::blank(h, total);
    for (i, f) in frames.iter().enumerate() {
        let x0 = i * (w + 1);
        for r in 0..h {
            for c in 0..w {
                out.set(r, x0 + c, f.get(r, c));
            }
            if x0 + w < total {
                out.set(r, x0 + w, 0.0);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalEcho {
    pub dataset: PathBuf,
    pub experiment: Experiment,
    pub run: RunConfig,
    pub eval: EvalSettings,
    pub samples: usize,
}

fn default_workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<(), Failure> {
    if !a.dataset.join(MANIFEST_FILE).is_file() {
        return Err(Failure::usage(format!(
            "{} has no {MANIFEST_FILE}; generate a dataset first",
            a.dataset.display()
        )));
    }
    let file = CliConfig::load(a.config.as_deref())?;
    let mut run = file.run;
    let mut ev = file.eval;
    if a.config.is_none() {
        ev.workers = default_workers();
    }
    if let Some(v) = a.iters {
        run.max_iterations = v;
    }
    if a.limit.is_some() {
        ev.limit = a.limit;
    }
    if a.max_gap.is_some() {
        ev.max_gap = a.max_gap;
    }
    if let Some(v) = &a.alphas {
        ev.alphas = v.clone();
    }
    if let Some(v) = &a.kernels {
        ev.kernels = v.clone();
    }
    if let Some(v) = &a.gap_lengths {
        ev.gap_lengths = v.clone();
    }
    if let Some(v) = a.trials {
        ev.trials = v;
    }
    if let Some(v) = a.workers {
        ev.workers = v;
    }
    run.validate()?;
    if let Some(alpha) = ev.alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Failure::usage(format!("alphas must lie in [0, 1], got {alpha}")));
    }

    let (manifest, mut samples) = load_dataset(&a.dataset)?;
    if let Some(max) = ev.max_gap {
        samples.retain(|s| s.gap_stat.gap <= max);
    }
    if let Some(n) = ev.limit {
        samples.truncate(n);
    }
    if samples.is_empty() && a.experiment != Experiment::Rf {
        return Err(Failure::usage("no samples left after filtering"));
    }
    create_dir(&a.out)?;
    echo_config(
        &a.out,
        &EvalEcho {
            dataset: a.dataset.clone(),
            experiment: a.experiment,
            run: run.clone(),
            eval: ev.clone(),
            samples: samples.len(),
        },
    )?;

    match a.experiment {
        Experiment::Comparison => {
            let c = run_comparison(&samples, &run, ev.workers)?;
            write_csv(&a.out.join("comparison.csv"), &c.records)?;
            write_json(&a.out.join("comparison_summary.json"), &(&c.summary, &c.failures))?;
            for s in &c.summary {
                eprintln!(
                    "{:?}: n {} mse {:.2} iou {:.3} median best iteration {}",
                    s.method, s.n, s.mean_mse, s.mean_iou, s.median_best_iteration
                );
            }
            for f in &c.failures {
                eprintln!("failed {}: {}", f.id, f.error);
            }
        }
        Experiment::Alpha => {
            let rows = sweep_alpha(&samples, &ev.alphas, &run, ev.workers)?;
            write_csv(&a.out.join("alpha_sweep.csv"), &rows)?;
            for r in &rows {
                eprintln!("alpha {}: mse {:.2} iou {:.3}", r.alpha, r.mse, r.iou);
            }
        }
        Experiment::Correlation => {
            let report = gamma_gap_correlation(&samples, &run.scores)?;
            write_json(&a.out.join("correlation.json"), &report)?;
            eprintln!("pearson r {:.4} over {} samples", report.pearson_r, report.n);
        }
        Experiment::Rf => {
            let rf = RfConfig {
                kernels: ev.kernels.clone(),
                gap_lengths: ev.gap_lengths.clone(),
                trials: ev.trials,
                gaps_per_shape: ev.gaps_per_shape,
                dataset: manifest.config.clone(),
            };
            let rows = sweep_receptive_field(&rf, &run, ev.workers)?;
            write_csv(&a.out.join("rf_sweep.csv"), &rows)?;
            write_json(
                &a.out.join("rf_summary.json"),
                &serde_json::json!({
                    "success_definition": harness::SUCCESS_DEFINITION,
                    "config": rf,
                    "rows": rows,
                }),
            )?;
            for r in &rows {
                eprintln!("kernel {} gap {}: {:.2}", r.kernel, r.gap, r.success_rate);
            }
        }
    }
    Ok(())
}
