//! End-to-end checks of the `contour` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use contour_core::image::BinaryImage;

fn contour(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_contour"))
        .args(args)
        .current_dir(cwd)
        .env_remove("CONTOUR_WORKERS")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn generate(dir: &Path, name: &str, size: usize, count: usize) {
    let (size, count) = (size.to_string(), count.to_string());
    ok(&contour(
        &[
            "generate",
            "--dataset",
            "simple",
            "--count",
            &count,
            "--size",
            &size,
            "--seed",
            "4",
            "--out",
            name,
        ],
        dir,
    ));
}

#[test]
fn generate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    generate(tmp.path(), "a", 32, 3);
    generate(tmp.path(), "b", 32, 3);
    let names: Vec<_> = fs::read_dir(tmp.path().join("a/simple"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(names.len(), 7, "{names:?}");
    for name in names {
        let a = fs::read(tmp.path().join("a/simple").join(&name)).unwrap();
        let b = fs::read(tmp.path().join("b/simple").join(&name)).unwrap();
        assert_eq!(a, b, "{name:?} differs");
    }
    assert!(tmp.path().join("a/config.json").is_file());
}

#[test]
fn zero_count_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = contour(&["generate", "--count", "0", "--out", "d"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_without_manifest_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = contour(
        &["eval", "--dataset", ".", "--experiment", "comparison", "--out", "r"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("manifest"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("c.json"),
        r#"{"run": {"max_iterations": 3, "learning_rat": 0.1}}"#,
    )
    .unwrap();
    let out = contour(&["generate", "--config", "c.json", "--out", "d"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn complete_writes_outputs_at_input_size() {
    let tmp = tempfile::tempdir().unwrap();
    generate(tmp.path(), "d", 32, 1);
    // 30×30 forces padding to the generator's size multiple and back.
    let crop = |name: &str| {
        let img = BinaryImage::load_png(tmp.path().join("d/simple").join(name)).unwrap();
        img.crop(30, 30).save_png(tmp.path().join(name)).unwrap();
    };
    crop("simple_00000_degraded.png");
    crop("simple_00000_gt.png");
    ok(&contour(
        &[
            "complete",
            "--input",
            "simple_00000_degraded.png",
            "--gt",
            "simple_00000_gt.png",
            "--gamma",
            "auto",
            "--iters",
            "6",
            "--emit-frames",
            "3",
            "--out",
            "run",
        ],
        tmp.path(),
    ));
    let run = tmp.path().join("run");
    let completed = BinaryImage::load_png(run.join("completed.png")).unwrap();
    assert_eq!(completed.dims(), (30, 30));
    assert!(completed.is_strictly_binary());
    let trace = fs::read_to_string(run.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some("iteration,energy,rho,omega,delta"));
    assert_eq!(trace.lines().count(), 7);
    let frames: Vec<_> = fs::read_dir(run.join("frames")).unwrap().collect();
    assert_eq!(frames.len(), 3);
    assert_eq!(
        BinaryImage::load_png(run.join("evolution.png")).unwrap().dims(),
        (30, 92)
    );

    let echo: serde_json::Value = serde_json::from_slice(&fs::read(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(echo["gamma_source"], "ground_truth");
    assert_eq!(echo["padded_size"], serde_json::json!([32, 32]));
    let eval: serde_json::Value = serde_json::from_slice(&fs::read(run.join("eval.json")).unwrap()).unwrap();
    assert!((1..=6).contains(&eval["best_iteration"].as_u64().unwrap()));
    assert!(eval["raw_iou"].as_f64().unwrap() > 0.0);
}

#[test]
fn gamma_auto_without_estimate_falls_back_with_a_warning() {
    let tmp = tempfile::tempdir().unwrap();
    generate(tmp.path(), "d", 32, 1);
    let out = contour(
        &[
            "complete",
            "--input",
            "d/simple/simple_00000_degraded.png",
            "--gamma",
            "auto",
            "--iters",
            "2",
            "--out",
            "run",
        ],
        tmp.path(),
    );
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    let echo: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("run/config.json")).unwrap()).unwrap();
    assert_eq!(echo["gamma_source"], "config_default");
    assert!(!tmp.path().join("run/eval.json").exists());

    let bad = contour(
        &[
            "complete",
            "--input",
            "d/simple/simple_00000_degraded.png",
            "--gap-guess",
            "1.5",
            "--out",
            "r2",
        ],
        tmp.path(),
    );
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn eval_comparison_and_correlation_write_reports() {
    let tmp = tempfile::tempdir().unwrap();
    generate(tmp.path(), "d", 32, 2);
    ok(&contour(
        &[
            "eval",
            "--dataset",
            "d/simple",
            "--experiment",
            "comparison",
            "--iters",
            "3",
            "--out",
            "cmp",
        ],
        tmp.path(),
    ));
    let csv = fs::read_to_string(tmp.path().join("cmp/comparison.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("id,method,mse,iou,best_iteration,wall_time_s"));
    assert_eq!(csv.lines().count(), 1 + 3 * 2);
    assert!(tmp.path().join("cmp/comparison_summary.json").is_file());

    ok(&contour(
        &[
            "eval",
            "--dataset",
            "d/simple",
            "--experiment",
            "correlation",
            "--out",
            "cor",
        ],
        tmp.path(),
    ));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("cor/correlation.json")).unwrap()).unwrap();
    assert_eq!(report["n"], 2);
    assert_eq!(report["min_reconstruction_score"], 100.0);
}
