//! Experiment harness: completion vs baselines, the α sweep, the γ–gap
//! correlation and the kernel-size study.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{sample_with_gaps, DatasetConfig, DatasetSample};
use crate::energy::EnergyVariant;
use crate::engine::{complete, complete_oracle_best, gamma_from_ground_truth, Completion, RunConfig};
use crate::error::{Error, Result};
use crate::image::BinaryImage;
use crate::scores::{extract_points, reconstruction_score, ScoreConfig};

/// Mean squared error on the 0–255 scale.
pub fn mse(a: &BinaryImage, b: &BinaryImage) -> Result<f64> {
    a.check_same_dims(b)?;
    Ok(crate::engine::mse_255(a, b))
}

/// Intersection over union of the dark pixel sets; 1 when both are empty.
pub fn iou(a: &BinaryImage, b: &BinaryImage, threshold: f32) -> Result<f64> {
    a.check_same_dims(b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (x, y) = (x < threshold, y < threshold);
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Raw,
    Dip,
    Dsp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub method: Method,
    pub mse: f64,
    pub iou: f64,
    pub best_iteration: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub n: usize,
    pub mean_mse: f64,
    pub mean_iou: f64,
    pub mean_best_iteration: f64,
    pub median_best_iteration: f64,
    pub mean_wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub records: Vec<EvalRecord>,
    pub summary: Vec<MethodSummary>,
    pub failures: Vec<Failure>,
}

impl Comparison {
    pub fn summary_for(&self, method: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Per-method aggregates, in RAW, DIP, DSP order.
pub fn summarize(records: &[EvalRecord]) -> Vec<MethodSummary> {
    [Method::Raw, Method::Dip, Method::Dsp]
        .into_iter()
        .filter_map(|method| {
            let rs: Vec<&EvalRecord> = records.iter().filter(|r| r.method == method).collect();
            if rs.is_empty() {
                return None;
            }
            let its: Vec<f64> = rs.iter().map(|r| r.best_iteration as f64).collect();
            Some(MethodSummary {
                method,
                n: rs.len(),
                mean_mse: mean(rs.iter().map(|r| r.mse)),
                mean_iou: mean(rs.iter().map(|r| r.iou)),
                mean_best_iteration: mean(its.iter().copied()),
                median_best_iteration: median(&its),
                mean_wall_time_s: mean(rs.iter().map(|r| r.wall_time_s)),
            })
        })
        .collect()
}

/// Runs `f` over `items` on a pool of `workers` threads, preserving order.
fn parallel_map<I: Sync, O: Send>(items: &[I], workers: usize, f: impl Fn(&I) -> O + Sync + Send) -> Result<Vec<O>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| items.par_iter().map(&f).collect()))
}

/// Run configuration for the completion arm on one sample: γ is the overfit
/// score the ground truth itself has.
pub fn dsp_config(sample: &DatasetSample, base: &RunConfig) -> Result<RunConfig> {
    let mut cfg = base.clone();
    cfg.energy.variant = EnergyVariant::Dsp;
    cfg.scores.gamma = gamma_from_ground_truth(&sample.ground_truth, &sample.degraded, &cfg.scores)?;
    Ok(cfg)
}

/// δ-selected completion of one sample.
pub fn run_dsp(sample: &DatasetSample, base: &RunConfig) -> Result<Completion> {
    complete(&sample.degraded, &dsp_config(sample, base)?)
}

/// Self-mask baseline of one sample, keeping the snapshot closest to the
/// ground truth.
pub fn run_dip(sample: &DatasetSample, base: &RunConfig) -> Result<Completion> {
    let mut cfg = base.clone();
    cfg.energy.variant = EnergyVariant::DipSelfMask;
    complete_oracle_best(&sample.degraded, &sample.ground_truth, &cfg)
}

fn record(
    id: &str,
    method: Method,
    output: &BinaryImage,
    gt: &BinaryImage,
    it: usize,
    t: f64,
    thr: f32,
) -> Result<EvalRecord> {
    Ok(EvalRecord {
        id: id.to_string(),
        method,
        mse: mse(output, gt)?,
        iou: iou(output, gt, thr)?,
        best_iteration: it,
        wall_time_s: t,
    })
}

/// RAW, DIP and DSP records for every sample. A failing run is listed under
/// `failures` and leaves the remaining samples unaffected.
pub fn run_comparison(samples: &[DatasetSample], base: &RunConfig, workers: usize) -> Result<Comparison> {
    base.validate()?;
    let thr = base.scores.binarize_threshold;
    let per_sample = parallel_map(samples, workers, |s| -> Result<Vec<EvalRecord>> {
        let raw = record(&s.id, Method::Raw, &s.degraded, &s.ground_truth, 0, 0.0, thr)?;
        let dip = run_dip(s, base)?;
        let dsp = run_dsp(s, base)?;
        Ok(vec![
            raw,
            record(
                &s.id,
                Method::Dip,
                &dip.best_output,
                &s.ground_truth,
                dip.trace.best_iteration,
                dip.wall_time_s,
                thr,
            )?,
            record(
                &s.id,
                Method::Dsp,
                &dsp.best_output,
                &s.ground_truth,
                dsp.trace.best_iteration,
                dsp.wall_time_s,
                thr,
            )?,
        ])
    })?;
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (s, r) in samples.iter().zip(per_sample) {
        match r {
            Ok(rs) => records.extend(rs),
            Err(e) => failures.push(Failure {
                id: s.id.clone(),
                error: e.to_string(),
            }),
        }
    }
    Ok(Comparison {
        summary: summarize(&records),
        records,
        failures,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaRecord {
    pub alpha: f64,
    pub n: usize,
    pub mse: f64,
    pub iou: f64,
    /// Mean best iteration.
    pub iterations: f64,
    /// Mean wall time in seconds.
    pub time: f64,
}

/// δ-selected completion of every sample at every α.
pub fn sweep_alpha(
    samples: &[DatasetSample],
    alphas: &[f64],
    base: &RunConfig,
    workers: usize,
) -> Result<Vec<AlphaRecord>> {
    base.validate()?;
    let thr = base.scores.binarize_threshold;
    let jobs: Vec<(f64, &DatasetSample)> = alphas
        .iter()
        .flat_map(|&a| samples.iter().map(move |s| (a, s)))
        .collect();
    let results = parallel_map(&jobs, workers, |&(alpha, s)| -> Result<(f64, f64, usize, f64)> {
        let mut cfg = base.clone();
        cfg.energy.alpha = alpha;
        let c = run_dsp(s, &cfg)?;
        Ok((
            mse(&c.best_output, &s.ground_truth)?,
            iou(&c.best_output, &s.ground_truth, thr)?,
            c.trace.best_iteration,
            c.wall_time_s,
        ))
    })?;
    let results: Vec<_> = results.into_iter().collect::<Result<_>>()?;
    Ok(alphas
        .iter()
        .enumerate()
        .map(|(i, &alpha)| {
            let rows = &results[i * samples.len()..(i + 1) * samples.len()];
            AlphaRecord {
                alpha,
                n: rows.len(),
                mse: mean(rows.iter().map(|r| r.0)),
                iou: mean(rows.iter().map(|r| r.1)),
                iterations: mean(rows.iter().map(|r| r.2 as f64)),
                time: mean(rows.iter().map(|r| r.3)),
            }
        })
        .collect())
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs.iter().copied()), mean(ys.iter().copied()));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub pearson_r: f64,
    pub n: usize,
    /// ρ(ground truth, degraded) of every sample.
    pub min_reconstruction_score: f64,
}

/// Correlation between the gap fraction and the overfit score of the ground
/// truth against the degraded image. Fails if any ground truth does not
/// reconstruct its degraded copy completely.
pub fn gamma_gap_correlation(samples: &[DatasetSample], cfg: &ScoreConfig) -> Result<CorrelationReport> {
    if samples.len() < 2 {
        return Err(Error::Config("correlation needs at least two samples".into()));
    }
    let mut gaps = Vec::with_capacity(samples.len());
    let mut omegas = Vec::with_capacity(samples.len());
    let mut min_rho = f64::INFINITY;
    for s in samples {
        let rho = reconstruction_score(&s.ground_truth, &s.degraded, cfg)?;
        if rho != 100.0 {
            return Err(Error::Infeasible(format!(
                "{}: ground truth reconstructs only {rho}% of the degraded image",
                s.id
            )));
        }
        min_rho = min_rho.min(rho);
        gaps.push(s.gap_stat.gap);
        omegas.push(gamma_from_ground_truth(&s.ground_truth, &s.degraded, cfg)?);
    }
    Ok(CorrelationReport {
        pearson_r: pearson(&gaps, &omegas),
        n: samples.len(),
        min_reconstruction_score: min_rho,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfRecord {
    pub kernel: usize,
    pub gap: usize,
    pub success_rate: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfConfig {
    pub kernels: Vec<usize>,
    pub gap_lengths: Vec<usize>,
    pub trials: usize,
    pub gaps_per_shape: usize,
    pub dataset: DatasetConfig,
}

pub const SUCCESS_DEFINITION: &str = "IoU(output, gt) >= 0.9 * IoU(gt, gt dilated by 1 px) \
and at least 50% of every gap's removed pixels lie within match_radius of an output point";

/// A completion succeeds when it is close to the ground truth overall and
/// bridges every gap: IoU at least 0.9 times that of the ground truth with
/// its own one-pixel dilation, and at least half of each gap's pixels within
/// the match radius of an output point.
pub fn completion_succeeds(output: &BinaryImage, sample: &DatasetSample, cfg: &ScoreConfig) -> Result<bool> {
    let thr = cfg.binarize_threshold;
    let gt = &sample.ground_truth;
    let reference = iou(gt, &gt.dilate_dark(1, thr), thr)?;
    if iou(output, gt, thr)? < 0.9 * reference {
        return Ok(false);
    }
    let out = extract_points(output, thr);
    Ok(sample.gaps.iter().all(|gap| {
        let covered = gap
            .iter()
            .filter(|&&(r, c)| out.index().any_within((r as u32, c as u32), cfg.match_radius))
            .count();
        2 * covered >= gap.len()
    }))
}

/// Success rate per (kernel, gap length). Trials are paired: trial `t` cuts
/// the same outline for every gap length and is completed with every kernel.
pub fn sweep_receptive_field(rf: &RfConfig, base: &RunConfig, workers: usize) -> Result<Vec<RfRecord>> {
    base.validate()?;
    if rf.trials == 0 {
        return Err(Error::Config("trials must be ≥ 1".into()));
    }
    let mut samples = Vec::new();
    for &gap in &rf.gap_lengths {
        for t in 0..rf.trials {
            samples.push(sample_with_gaps(&rf.dataset, t, rf.gaps_per_shape, gap)?);
        }
    }
    let jobs: Vec<(usize, usize)> = (0..rf.kernels.len())
        .flat_map(|k| (0..samples.len()).map(move |s| (k, s)))
        .collect();
    let outcomes = parallel_map(&jobs, workers, |&(k, si)| -> Result<bool> {
        let mut cfg = base.clone();
        cfg.generator.main_kernel = rf.kernels[k];
        let c = run_dsp(&samples[si], &cfg)?;
        completion_succeeds(&c.best_output, &samples[si], &cfg.scores)
    })?;
    let outcomes: Vec<bool> = outcomes.into_iter().collect::<Result<_>>()?;
    let mut records = Vec::new();
    for (k, &kernel) in rf.kernels.iter().enumerate() {
        for (g, &gap) in rf.gap_lengths.iter().enumerate() {
            let base_index = k * samples.len() + g * rf.trials;
            let wins = outcomes[base_index..base_index + rf.trials]
                .iter()
                .filter(|&&w| w)
                .count();
            records.push(RfRecord {
                kernel,
                gap,
                success_rate: wins as f64 / rf.trials as f64,
                trials: rf.trials,
            });
        }
    }
    Ok(records)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(h: usize, w: usize, dark: &[(usize, usize)]) -> BinaryImage {
        BinaryImage::from_dark_pixels(h, w, dark.iter().copied())
    }

    #[test]
    fn mse_examples() {
        let a = BinaryImage::blank(10, 10);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(
            mse(&BinaryImage::filled(4, 4, 0.0), &BinaryImage::filled(4, 4, 1.0)).unwrap(),
            65025.0
        );
        let b = img(10, 10, &[(3, 3)]);
        assert!((mse(&a, &b).unwrap() - 650.25).abs() < 1e-9);
        assert!(mse(&a, &BinaryImage::blank(9, 10)).is_err());
    }

    #[test]
    fn iou_examples() {
        let a: Vec<_> = (0..10).map(|i| (0, i)).collect();
        let b: Vec<_> = (0..10).map(|i| (0, i)).chain((0..10).map(|i| (1, i))).collect();
        let (ia, ib) = (img(4, 10, &a), img(4, 10, &b));
        assert_eq!(iou(&ia, &ia, 0.5).unwrap(), 1.0);
        assert_eq!(iou(&ia, &ib, 0.5).unwrap(), 0.5);
        assert_eq!(iou(&ia, &img(4, 10, &[(3, 3)]), 0.5).unwrap(), 0.0);
        let blank = BinaryImage::blank(4, 10);
        assert_eq!(iou(&blank, &blank, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn pearson_of_linear_data_is_one() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson(&xs, &[2.0, 4.0, 6.0, 8.0]) - 1.0).abs() < 1e-12);
        assert!((pearson(&xs, &[8.0, 6.0, 4.0, 2.0]) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn summary_matches_records() {
        let r = |id: &str, m, mse, iou, it| EvalRecord {
            id: id.into(),
            method: m,
            mse,
            iou,
            best_iteration: it,
            wall_time_s: 1.0,
        };
        let records = vec![
            r("a", Method::Raw, 10.0, 0.5, 0),
            r("b", Method::Raw, 30.0, 0.7, 0),
            r("a", Method::Dsp, 5.0, 0.9, 10),
            r("b", Method::Dsp, 7.0, 0.8, 30),
        ];
        let s = summarize(&records);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].method, Method::Raw);
        assert_eq!(s[0].mean_mse, 20.0);
        assert!((s[1].mean_iou - 0.85).abs() < 1e-12);
        assert_eq!(s[1].median_best_iteration, 20.0);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("comparison.csv");
        let records = vec![
            EvalRecord {
                id: "simple_00000".into(),
                method: Method::Dsp,
                mse: 123.456789,
                iou: 0.1 + 0.2,
                best_iteration: 17,
                wall_time_s: 1.0 / 3.0,
            },
            EvalRecord {
                id: "simple_00001".into(),
                method: Method::Raw,
                mse: 0.0,
                iou: 1.0,
                best_iteration: 0,
                wall_time_s: 0.0,
            },
        ];
        write_csv(&path, &records).unwrap();
        let back: Vec<EvalRecord> = read_csv(&path).unwrap();
        assert_eq!(back, records);
        let header = fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("id,method,mse,iou,best_iteration,wall_time_s\n"));
        assert!(header.contains(",DSP,"));
    }

    #[test]
    fn perfect_output_succeeds_and_raw_input_fails() {
        let cfg = DatasetConfig::new(crate::dataset::DatasetKind::Simple, 1, 64, 0);
        let s = sample_with_gaps(&cfg, 0, 2, 5).unwrap();
        let sc = ScoreConfig::default();
        assert!(completion_succeeds(&s.ground_truth, &s, &sc).unwrap());
        assert!(!completion_succeeds(&s.degraded, &s, &sc).unwrap());
    }
}
