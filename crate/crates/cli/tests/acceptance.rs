//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test --test acceptance -- 3 7` runs only the listed criteria.
//! Criteria 5, 6 and 10 reuse the completions of criterion 4.

use std::cell::OnceCell;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use contour_autodiff::{Graph, Tensor, Var};
use contour_cli::{cmd_complete, CompleteArgs, Gamma};
use contour_core::dataset::{generate_dataset, DatasetConfig, DatasetKind, DatasetSample};
use contour_core::energy::{dsp_energy, dsp_self_mask_baseline};
use contour_core::engine::RunConfig;
use contour_core::generator::{forward, init_generator, make_noise, GeneratorConfig};
use contour_core::harness::{
    gamma_gap_correlation, median, run_comparison, sweep_alpha, sweep_receptive_field, Comparison, Method, RfConfig,
};
use contour_core::scores::{dissimilarity, overfit_score, reconstruction_score, KdTree, ScoreConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Iteration cap of the completion experiments.
const CAP: usize = 250;
/// Iteration cap of the receptive-field sweep.
const RF_CAP: usize = 100;
const CANVAS: usize = 128;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn log(line: &str) {
    // Written straight to stderr so the lines survive output capture.
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
}

// ---------------------------------------------------------------- 1

#[derive(Debug, Clone)]
enum Step {
    Sigmoid,
    Leaky,
    OneMinus,
    Scale(f64),
    Shift(f64),
    Add(usize),
    Sub(usize),
    Mul(usize),
    SelfProduct,
    Conv {
        weight: usize,
        bias: Option<usize>,
        stride: usize,
        pad: usize,
    },
    Upsample,
    Concat(usize),
    Norm {
        scale: usize,
        shift: usize,
    },
}

#[derive(Debug, Clone, Copy)]
enum Reduce {
    SumSquares,
    Mean,
    Sum,
}

struct Recipe {
    leaves: Vec<Tensor<f64>>,
    steps: Vec<Step>,
    reduce: Reduce,
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn random_recipe(rng: &mut ChaCha8Rng) -> Recipe {
    let (mut c, mut h, mut w) = (
        rng.random_range(1..=3),
        rng.random_range(2..=5),
        rng.random_range(2..=5),
    );
    let mut leaves = vec![random_tensor(rng, vec![c, h, w])];
    let mut steps = Vec::new();
    let mut leaf = |rng: &mut ChaCha8Rng, shape: Vec<usize>| {
        leaves.push(random_tensor(rng, shape));
        leaves.len() - 1
    };
    for _ in 0..rng.random_range(3..=7) {
        let step = match rng.random_range(0..12) {
            0 => Step::Sigmoid,
            1 => Step::Leaky,
            2 => Step::OneMinus,
            3 => Step::Scale(rng.random_range(-2.0..2.0)),
            4 => Step::Shift(rng.random_range(-1.0..1.0)),
            5 => Step::Add(leaf(rng, vec![c, h, w])),
            6 => Step::Sub(leaf(rng, vec![c, h, w])),
            7 => Step::Mul(leaf(rng, vec![c, h, w])),
            8 => Step::SelfProduct,
            9 => {
                let k = [1, 3, 5][rng.random_range(0..3)];
                let stride = if h >= 4 && w >= 4 { rng.random_range(1..=2) } else { 1 };
                let c_out = rng.random_range(1..=3);
                let weight = leaf(rng, vec![c_out, c, k, k]);
                let bias = rng.random_bool(0.5).then(|| leaf(rng, vec![c_out]));
                let pad = (k - 1) / 2;
                c = c_out;
                h = (h + 2 * pad - k) / stride + 1;
                w = (w + 2 * pad - k) / stride + 1;
                Step::Conv {
                    weight,
                    bias,
                    stride,
                    pad,
                }
            }
            10 if h * w <= 16 => {
                h *= 2;
                w *= 2;
                Step::Upsample
            }
            10 => {
                let extra = rng.random_range(1..=2);
                let other = leaf(rng, vec![extra, h, w]);
                c += extra;
                Step::Concat(other)
            }
            _ => Step::Norm {
                scale: leaf(rng, vec![c]),
                shift: leaf(rng, vec![c]),
            },
        };
        steps.push(step);
    }
    let reduce = [Reduce::SumSquares, Reduce::Mean, Reduce::Sum][rng.random_range(0..3)];
    Recipe { leaves, steps, reduce }
}

fn build(recipe: &Recipe, g: &mut Graph<f64>, v: &[Var]) -> Var {
    let mut x = v[0];
    for step in &recipe.steps {
        x = match *step {
            Step::Sigmoid => g.sigmoid(x),
            Step::Leaky => g.leaky_relu(x, 0.1),
            Step::OneMinus => g.one_minus(x),
            Step::Scale(s) => g.scalar_mul(x, s),
            Step::Shift(s) => g.add_scalar(x, s),
            Step::Add(i) => g.add(x, v[i]).unwrap(),
            Step::Sub(i) => g.sub(x, v[i]).unwrap(),
            Step::Mul(i) => g.mul(x, v[i]).unwrap(),
            Step::SelfProduct => {
                let s = g.sigmoid(x);
                g.mul(x, s).unwrap()
            }
            Step::Conv {
                weight,
                bias,
                stride,
                pad,
            } => g.conv2d(x, v[weight], bias.map(|b| v[b]), stride, pad).unwrap(),
            Step::Upsample => g.upsample_nearest2x(x).unwrap(),
            Step::Concat(i) => g.concat_channels(&[x, v[i]]).unwrap(),
            Step::Norm { scale, shift } => g.channel_norm(x, v[scale], v[shift], 1e-5).unwrap(),
        };
    }
    match recipe.reduce {
        Reduce::SumSquares => g.sum_squares(x),
        Reduce::Mean => g.mean(x),
        Reduce::Sum => g.sum(x),
    }
}

/// Largest |analytic − numeric| / max(|analytic|, |numeric|) over entries
/// whose gradient is measurable (scale above 1e-6), and the entry count.
fn gradient_error(leaves: &[Tensor<f64>], f: &dyn Fn(&mut Graph<f64>, &[Var]) -> Var, h: f64) -> (f64, usize) {
    let eval = |values: &[Tensor<f64>]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let l = f(&mut g, &vars);
        g.value(l).item().unwrap()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = leaves.iter().map(|t| g.leaf(t.clone().with_grad())).collect();
    let l = f(&mut g, &vars);
    g.backward(l).unwrap();
    let analytic = g.into_tensors(vars);

    let (mut worst, mut checked) = (0.0f64, 0);
    for (li, leaf) in leaves.iter().enumerate() {
        for i in 0..leaf.numel() {
            let mut plus = leaves.to_vec();
            plus[li].data_mut()[i] += h;
            let mut minus = leaves.to_vec();
            minus[li].data_mut()[i] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let exact = analytic[li].grad().unwrap()[i];
            let scale = exact.abs().max(numeric.abs());
            if scale > 1e-6 {
                worst = worst.max((exact - numeric).abs() / scale);
                checked += 1;
            }
        }
    }
    (worst, checked)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst_graph, mut checked) = (0.0f64, 0);
    for _ in 0..50 {
        let recipe = random_recipe(&mut rng);
        let (err, n) = gradient_error(&recipe.leaves, &|g, v| build(&recipe, g, v), 1e-6);
        worst_graph = worst_graph.max(err);
        checked += n;
    }

    let cfg = GeneratorConfig {
        depth: 2,
        down_channels: 4,
        up_channels: 4,
        skip_channels: 4,
        noise_channels: 4,
        ..GeneratorConfig::desk()
    };
    let params = init_generator::<f64>(&cfg, 102).unwrap();
    let z = make_noise::<f64>(&cfg, 16, 16, 103).unwrap();
    let target = Tensor::new(
        vec![1, 16, 16],
        (0..256).map(|_| if rng.random_bool(0.2) { 0.0 } else { 1.0 }).collect(),
    )
    .unwrap();
    let mut leaves = params.tensors.clone();
    leaves.push(z);
    leaves.push(target);
    let generator = |g: &mut Graph<f64>, v: &[Var]| {
        let n = v.len();
        let out = forward(g, &cfg, &v[..n - 2], v[n - 2]).unwrap();
        dsp_energy(g, out, v[n - 1], 0.15).unwrap()
    };
    let (worst_gen, gen_checked) = gradient_error(&leaves, &generator, 1e-5);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_graph < 1e-3 && worst_gen < 1e-3 && secs < 60.0 && checked > 0 && gen_checked > 0,
        format!(
            "random graphs max rel err {worst_graph:.2e} ({checked} entries), depth-2 generator {worst_gen:.2e} \
             ({gen_checked} entries), {secs:.1} s"
        ),
    )
}

// ---------------------------------------------------------------- 2

fn energies(x: &[f64], t: &[f64], alpha: f64) -> (f64, f64, f64) {
    let mut g = Graph::new();
    let xv = g.constant(Tensor::new(vec![x.len()], x.to_vec()).unwrap());
    let tv = g.constant(Tensor::new(vec![t.len()], t.to_vec()).unwrap());
    let e = dsp_energy(&mut g, xv, tv, alpha).unwrap();
    let e1 = dsp_energy(&mut g, xv, tv, 1.0).unwrap();
    let m = dsp_self_mask_baseline(&mut g, xv, tv).unwrap();
    (
        g.value(e).item().unwrap(),
        g.value(e1).item().unwrap(),
        g.value(m).item().unwrap(),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(201);
    let (mut worst, mut exact) = (0.0f64, true);
    for _ in 0..1000 {
        let n = rng.random_range(1..=64);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let t: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random_bool(0.5) {
                    rng.random_range(0.0..1.0)
                } else {
                    f64::from(rng.random_bool(0.7))
                }
            })
            .collect();
        let alpha = rng.random_range(0.0..=1.0);
        let factored: f64 = x
            .iter()
            .zip(&t)
            .map(|(&x, &t)| alpha * ((x - t) * t).powi(2) + (1.0 - alpha) * ((x - t) * (1.0 - t)).powi(2))
            .sum();
        let (e, e1, m) = energies(&x, &t, alpha);
        worst = worst.max((e - factored).abs() / factored.abs().max(f64::MIN_POSITIVE));
        exact &= e1 == m;
    }
    outcome(
        worst < 1e-5 && exact,
        format!("max rel deviation from factored form {worst:.2e} over 1000 pairs, alpha=1 equals self-mask exactly: {exact}"),
    )
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let cfg = ScoreConfig::default();
    let images: Vec<_> = generate_dataset(&DatasetConfig::new(DatasetKind::Complex, 100, CANVAS, 301))
        .unwrap()
        .into_iter()
        .map(|s| s.ground_truth)
        .collect();
    let fixed = images
        .iter()
        .all(|x| reconstruction_score(x, x, &cfg).unwrap() == 100.0 && overfit_score(x, x, &cfg).unwrap() == 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(302);
    let delta_zero = (0..100).all(|_| {
        let gamma = rng.random_range(0.0..100.0);
        dissimilarity(100.0, gamma, gamma) == 0.0
    });
    let mut kd_exact = true;
    for _ in 0..100 {
        let n = rng.random_range(1..=400);
        let points: Vec<(u32, u32)> = (0..n)
            .map(|_| (rng.random_range(0..96), rng.random_range(0..96)))
            .collect();
        let tree = KdTree::build(&points);
        for _ in 0..50 {
            let q = (rng.random_range(0..96), rng.random_range(0..96));
            let brute = points
                .iter()
                .map(|p| {
                    let (dr, dc) = (p.0 as i64 - q.0 as i64, p.1 as i64 - q.1 as i64);
                    (dr * dr + dc * dc) as u64
                })
                .min()
                .unwrap();
            let (_, d) = tree.nearest(q).unwrap();
            let radius = rng.random_range(0.0..4.0);
            kd_exact &= d == brute && tree.any_within(q, radius) == ((brute as f64) <= radius * radius);
        }
    }
    outcome(
        fixed && delta_zero && kd_exact,
        format!(
            "rho(x,x)=100 and omega(x,x)=0 on 100 images: {fixed}, delta(100,g,g)=0: {delta_zero}, \
             k-d tree equals exhaustive search on 100 sets: {kd_exact}"
        ),
    )
}

// ---------------------------------------------------------------- 4, 5, 6, 10

fn base_run(max_iterations: usize) -> RunConfig {
    let mut cfg = RunConfig {
        max_iterations,
        ..RunConfig::default()
    };
    cfg.energy.alpha = 0.15;
    cfg
}

/// The first 20 Simple samples with gap at most 10%.
fn comparison_samples() -> Vec<DatasetSample> {
    let samples: Vec<_> = generate_dataset(&DatasetConfig::new(DatasetKind::Simple, 60, CANVAS, 401))
        .unwrap()
        .into_iter()
        .filter(|s| s.gap_stat.gap <= 0.10)
        .take(20)
        .collect();
    assert_eq!(samples.len(), 20, "not enough samples with a gap of at most 10%");
    samples
}

struct Shared {
    samples: Vec<DatasetSample>,
    comparison: Comparison,
}

fn shared(cell: &OnceCell<Shared>) -> &Shared {
    cell.get_or_init(|| {
        let samples = comparison_samples();
        let start = Instant::now();
        let comparison = run_comparison(&samples, &base_run(CAP), 1).unwrap();
        log(&format!(
            "  comparison of {} samples at {CAP} iterations took {:.0} s",
            samples.len(),
            start.elapsed().as_secs_f64()
        ));
        Shared { samples, comparison }
    })
}

fn criterion_4(cell: &OnceCell<Shared>) -> Outcome {
    let c = &shared(cell).comparison;
    let (raw, dsp) = (c.summary_for(Method::Raw).unwrap(), c.summary_for(Method::Dsp).unwrap());
    outcome(
        c.failures.is_empty() && dsp.n >= 20 && dsp.mean_iou > raw.mean_iou && dsp.mean_mse < raw.mean_mse,
        format!(
            "n {}: IoU dsp {:.3} vs raw {:.3}, MSE dsp {:.1} vs raw {:.1}, failures {}",
            dsp.n,
            dsp.mean_iou,
            raw.mean_iou,
            dsp.mean_mse,
            raw.mean_mse,
            c.failures.len()
        ),
    )
}

fn criterion_5(cell: &OnceCell<Shared>) -> Outcome {
    let c = &shared(cell).comparison;
    let (dip, dsp) = (c.summary_for(Method::Dip).unwrap(), c.summary_for(Method::Dsp).unwrap());
    outcome(
        dip.n == dsp.n && dip.mean_iou < dsp.mean_iou,
        format!("IoU dip {:.3} vs dsp {:.3} (n {})", dip.mean_iou, dsp.mean_iou, dip.n),
    )
}

fn criterion_6(cell: &OnceCell<Shared>) -> Outcome {
    let s = shared(cell);
    let subset = &s.samples[..10];
    // α = 0.15 at the same cap and seed is exactly the comparison's DSP arm.
    let at_015: Vec<f64> = subset
        .iter()
        .map(|x| {
            s.comparison
                .records
                .iter()
                .find(|r| r.id == x.id && r.method == Method::Dsp)
                .unwrap()
                .mse
        })
        .collect();
    let others = [0.0, 0.05, 0.5, 0.95, 1.0];
    let start = Instant::now();
    let swept = sweep_alpha(subset, &others, &base_run(CAP), 1).unwrap();
    log(&format!("  alpha sweep took {:.0} s", start.elapsed().as_secs_f64()));
    let mut table: Vec<(f64, f64)> = swept.iter().map(|r| (r.alpha, r.mse)).collect();
    table.push((0.15, at_015.iter().sum::<f64>() / at_015.len() as f64));
    table.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mse_at = |a: f64| table.iter().find(|r| r.0 == a).unwrap().1;
    let argmin = table.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0;
    let listing: Vec<String> = table.iter().map(|(a, m)| format!("{a}: {m:.1}")).collect();
    outcome(
        (argmin == 0.05 || argmin == 0.15) && mse_at(0.0) > mse_at(0.15) && mse_at(1.0) > mse_at(0.15),
        format!(
            "mean MSE by alpha over 10 samples [{}], minimum at {argmin}",
            listing.join(", ")
        ),
    )
}

fn criterion_10(cell: &OnceCell<Shared>) -> Outcome {
    let c = &shared(cell).comparison;
    let its: Vec<f64> = c
        .records
        .iter()
        .filter(|r| r.method == Method::Dsp)
        .map(|r| r.best_iteration as f64)
        .collect();
    let m = median(&its);
    outcome(
        m < CAP as f64 / 2.0,
        format!("median DSP best iteration {m} of cap {CAP}"),
    )
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let mut samples = generate_dataset(&DatasetConfig::new(DatasetKind::Simple, 100, CANVAS, 701)).unwrap();
    samples.extend(generate_dataset(&DatasetConfig::new(DatasetKind::Complex, 100, CANVAS, 702)).unwrap());
    match gamma_gap_correlation(&samples, &ScoreConfig::default()) {
        Ok(r) => outcome(
            r.n >= 200 && r.pearson_r > 0.9 && r.min_reconstruction_score == 100.0,
            format!(
                "pearson r {:.4} over {} samples (100 Simple, 100 Complex), min rho {}",
                r.pearson_r, r.n, r.min_reconstruction_score
            ),
        ),
        Err(e) => outcome(false, format!("correlation failed: {e}")),
    }
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Outcome {
    let rf = RfConfig {
        kernels: vec![3, 5, 7],
        gap_lengths: vec![4, 8, 12],
        trials: 10,
        gaps_per_shape: 2,
        dataset: DatasetConfig::new(DatasetKind::Simple, 1, CANVAS, 801),
    };
    let start = Instant::now();
    let rows = sweep_receptive_field(&rf, &base_run(RF_CAP), 1).unwrap();
    log(&format!(
        "  receptive-field sweep took {:.0} s",
        start.elapsed().as_secs_f64()
    ));
    let rate = |k: usize, g: usize| rows.iter().find(|r| r.kernel == k && r.gap == g).unwrap().success_rate;
    let monotone = rf
        .gap_lengths
        .iter()
        .all(|&g| rf.kernels.windows(2).all(|w| rate(w[0], g) <= rate(w[1], g)));
    let cells: Vec<String> = rows
        .iter()
        .map(|r| format!("k{} g{}: {:.2}", r.kernel, r.gap, r.success_rate))
        .collect();
    outcome(
        monotone,
        format!(
            "success rates [{}] over {} trials per cell",
            cells.join(", "),
            rf.trials
        ),
    )
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let sample = generate_dataset(&DatasetConfig::new(DatasetKind::Simple, 1, CANVAS, 901))
        .unwrap()
        .remove(0);
    let input = dir.path().join("degraded.png");
    sample.degraded.save_png(&input).unwrap();
    let run = |name: &str| -> PathBuf {
        let out = dir.path().join(name);
        let args = CompleteArgs {
            input: input.clone(),
            gt: None,
            alpha: Some(0.15),
            gamma: Some(Gamma::Value(5.0)),
            gap_guess: None,
            iters: Some(60),
            seed: Some(7),
            learning_rate: None,
            emit_frames: None,
            config: None,
            out: out.clone(),
        };
        cmd_complete(&args).unwrap();
        out
    };
    let (a, b) = (run("a"), run("b"));
    let same = |f: &str| std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap();
    let (png, csv) = (same("completed.png"), same("trace.csv"));
    outcome(
        png && csv,
        format!("completed.png identical: {png}, trace.csv identical: {csv}"),
    )
}

type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: u32| selected.is_empty() || selected.contains(&n);
    let cell = OnceCell::new();
    let criteria: Vec<(u32, &str, Check<'_>)> = vec![
        (1, "gradient suite", Box::new(criterion_1)),
        (2, "energy identity", Box::new(criterion_2)),
        (3, "score fixed points", Box::new(criterion_3)),
        (4, "end-to-end completion", Box::new(|| criterion_4(&cell))),
        (5, "self-mask baseline inferiority", Box::new(|| criterion_5(&cell))),
        (6, "alpha sweep", Box::new(|| criterion_6(&cell))),
        (7, "gap-gamma correlation", Box::new(criterion_7)),
        (8, "receptive-field monotonicity", Box::new(criterion_8)),
        (9, "determinism", Box::new(criterion_9)),
        (10, "best-iteration sanity", Box::new(|| criterion_10(&cell))),
    ];
    let mut failed = Vec::new();
    for (n, name, check) in &criteria {
        if !wanted(*n) {
            continue;
        }
        let o = check();
        log(&format!(
            "criterion {n} ({name}): {}  {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        ));
        if !o.pass {
            failed.push(*n);
        }
    }
    if failed.is_empty() {
        log("acceptance: all selected criteria pass");
        ExitCode::SUCCESS
    } else {
        log(&format!("acceptance: failing criteria {failed:?}"));
        ExitCode::FAILURE
    }
}
