//! The iterative completion loop.
//!
//! A randomly initialized generator is fitted to the incomplete image from a
//! fixed noise input. Every scored iteration the (binarized) output is
//! compared with the incomplete image and the snapshot closest to the target
//! scores is kept.

use std::time::Instant;

use contour_autodiff::{AdamState, Graph, Tensor};
use serde::{Deserialize, Serialize};

use crate::energy::EnergyConfig;
use crate::error::{Error, Result};
use crate::generator::{forward, init_generator, make_noise, GeneratorConfig};
use crate::image::BinaryImage;
use crate::scores::{extract_points, overfit_score, score_against, ScoreConfig};

/// Offset between the parameter seed and the noise seed of one run.
const NOISE_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub generator: GeneratorConfig,
    pub energy: EnergyConfig,
    pub scores: ScoreConfig,
    pub max_iterations: usize,
    pub learning_rate: f64,
    pub score_every: usize,
    /// Keep a frame every this many iterations; 0 disables.
    pub snapshot_every: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            generator: GeneratorConfig::desk(),
            energy: EnergyConfig::default(),
            scores: ScoreConfig::default(),
            max_iterations: 2500,
            learning_rate: 0.01,
            score_every: 1,
            snapshot_every: 0,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.energy.validate()?;
        self.scores.validate()?;
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be ≥ 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.score_every == 0 {
            return Err(Error::Config("score_every must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub energy: f64,
    pub rho: f64,
    pub omega: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTrace {
    /// One row per scored iteration.
    pub rows: Vec<TraceRow>,
    /// Energy of every iteration, scored or not.
    pub energies: Vec<f64>,
    pub best_iteration: usize,
    pub best_delta: f64,
    /// Binarized output at `best_iteration`.
    pub best_output: BinaryImage,
    /// Periodic binarized frames, when `snapshot_every > 0`.
    pub frames: Vec<(usize, BinaryImage)>,
}

impl ScoreTrace {
    pub fn write_csv(&self, writer: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io("trace.csv", e))?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Completion {
    pub best_output: BinaryImage,
    pub trace: ScoreTrace,
    /// Selection-criterion value of the best snapshot: δ, or MSE against the
    /// ground truth for oracle selection.
    pub best_criterion: f64,
    pub wall_time_s: f64,
}

/// Which snapshot of the trajectory to keep.
#[derive(Debug, Clone, Copy)]
pub enum Selection<'a> {
    /// Minimum dissimilarity δ.
    Dissimilarity,
    /// Minimum MSE against a ground truth (evaluation protocol only).
    OracleMse(&'a BinaryImage),
}

/// Fits the generator to `incomplete` and returns the minimum-δ snapshot
/// (the latest one on ties).
pub fn complete(incomplete: &BinaryImage, cfg: &RunConfig) -> Result<Completion> {
    run(incomplete, cfg, Selection::Dissimilarity)
}

/// Same loop, keeping the snapshot with the lowest MSE against `ground_truth`.
pub fn complete_oracle_best(
    incomplete: &BinaryImage,
    ground_truth: &BinaryImage,
    cfg: &RunConfig,
) -> Result<Completion> {
    incomplete.check_same_dims(ground_truth)?;
    run(incomplete, cfg, Selection::OracleMse(ground_truth))
}

/// γ = 100 · gap.
pub fn estimate_gamma(gap_guess: f64) -> f64 {
    100.0 * gap_guess.clamp(0.0, 1.0)
}

/// γ as the overfit score the ground truth itself would have.
pub fn gamma_from_ground_truth(ground_truth: &BinaryImage, incomplete: &BinaryImage, cfg: &ScoreConfig) -> Result<f64> {
    overfit_score(ground_truth, incomplete, cfg)
}

/// Mean squared error on the 0–255 scale.
pub(crate) fn mse_255(a: &BinaryImage, b: &BinaryImage) -> f64 {
    let n = a.data().len().max(1) as f64;
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = 255.0 * (x as f64 - y as f64);
            d * d
        })
        .sum::<f64>()
        / n
}

pub fn run(incomplete: &BinaryImage, cfg: &RunConfig, selection: Selection<'_>) -> Result<Completion> {
    cfg.validate()?;
    let (height, width) = incomplete.dims();
    cfg.generator.check_size(height, width)?;
    let start = Instant::now();

    let gen = &cfg.generator;
    let mut params = init_generator::<f32>(gen, cfg.seed)?;
    let noise: Tensor<f32> = make_noise(gen, height, width, cfg.seed.wrapping_add(NOISE_SEED_OFFSET))?;
    let target = incomplete.to_tensor(gen.output_channels);
    let mut adam = AdamState::new(&params.tensors, cfg.learning_rate as f32);
    let incomplete_points = extract_points(incomplete, cfg.scores.binarize_threshold);
    let threshold = cfg.scores.binarize_threshold;

    let mut rows = Vec::new();
    let mut energies = Vec::with_capacity(cfg.max_iterations);
    let mut frames = Vec::new();
    let mut best: Option<(usize, f64, f64, BinaryImage)> = None;

    for iteration in 1..=cfg.max_iterations {
        let mut g = Graph::new();
        let vars: Vec<_> = params.tensors.drain(..).map(|t| g.leaf(t)).collect();
        let z = g.constant(noise.clone());
        let t = g.constant(target.clone());
        let out = forward(&mut g, gen, &vars, z)?;
        let loss = cfg.energy.evaluate(&mut g, out, t)?;
        let energy = g.value(loss).item().unwrap_or(f32::NAN) as f64;
        if !energy.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration,
                value: energy,
            });
        }
        energies.push(energy);

        let scored = iteration % cfg.score_every == 0 || iteration == cfg.max_iterations;
        let framed = cfg.snapshot_every > 0 && iteration % cfg.snapshot_every == 0;
        let output = (scored || framed)
            .then(|| BinaryImage::from_tensor(g.value(out)).map(|img| img.binarize(threshold)))
            .transpose()?;

        g.backward(loss)?;
        params.tensors = g.into_tensors(vars);
        adam.step(&mut params.tensors)?;
        params.zero_grad();

        let Some(output) = output else { continue };
        if framed {
            frames.push((iteration, output.clone()));
        }
        if !scored {
            continue;
        }
        let s = score_against(&output, &incomplete_points, &cfg.scores);
        rows.push(TraceRow {
            iteration,
            energy,
            rho: s.rho,
            omega: s.omega,
            delta: s.delta,
        });
        let criterion = match selection {
            Selection::Dissimilarity => s.delta,
            Selection::OracleMse(gt) => mse_255(&output, gt),
        };
        // Ties go to the later snapshot: equally dissimilar, less thickened.
        if best.as_ref().is_none_or(|(_, c, _, _)| criterion <= *c) {
            best = Some((iteration, criterion, s.delta, output));
        }
    }

    let (best_iteration, best_criterion, best_delta, best_output) = best.expect("the final iteration is always scored");
    Ok(Completion {
        best_output: best_output.clone(),
        trace: ScoreTrace {
            rows,
            energies,
            best_iteration,
            best_delta,
            best_output,
            frames,
        },
        best_criterion,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}
