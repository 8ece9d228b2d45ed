use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::Rng as _;
use serde_json::Value;
use tempfile::TempDir;
use tsk_core::{seed, Matrix, Mode, TskModel};

const CHEAP: [&str; 8] = ["--max-epochs", "6", "--patience", "2", "--rules", "4", "--lambda", "1"];

fn tsk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsk")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = tsk(args);
    assert!(out.status.success(), "tsk {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn error_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("stderr has a line");
    serde_json::from_str(line).expect("stderr ends with an error object")
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn train(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = path(dir, name);
    let mut args = vec!["train", "--synthetic", "blobs", "--out", &out];
    args.extend_from_slice(&CHEAP);
    args.extend_from_slice(extra);
    ok(&args);
    dir.join(name)
}

fn read_csv(p: &Path) -> Vec<std::collections::HashMap<String, String>> {
    let mut r = csv::Reader::from_path(p).unwrap();
    let headers = r.headers().unwrap().clone();
    r.records()
        .map(|rec| headers.iter().zip(rec.unwrap().iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect())
        .collect()
}

#[test]
fn train_writes_artifacts_with_default_rule_count() {
    let dir = TempDir::new().unwrap();
    let out = path(dir.path(), "m");
    ok(&["train", "--synthetic", "blobs", "--out", &out, "--max-epochs", "4", "--patience", "2", "--lambda", "1"]);
    for f in ["model.json", "trace.csv", "pipeline.json", "summary.json"] {
        assert!(dir.path().join("m").join(f).exists(), "{f}");
    }
    let model = TskModel::load(dir.path().join("m/model.json")).unwrap();
    assert_eq!(model.rules(), 20);
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("m/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["rules"], 20);
    assert_eq!(summary["variant"], "MBGD-UR-BN");
}

#[test]
fn training_is_byte_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = train(dir.path(), "a", &["--seed", "7"]);
    let b = train(dir.path(), "b", &["--seed", "7"]);
    let c = train(dir.path(), "c", &["--seed", "8"]);
    let read = |p: &Path| std::fs::read(p.join("model.json")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    assert_eq!(std::fs::read(a.join("trace.csv")).unwrap(), std::fs::read(b.join("trace.csv")).unwrap());
}

#[test]
fn evaluate_prints_metrics() {
    let dir = TempDir::new().unwrap();
    let m = train(dir.path(), "m", &[]);
    let model = path(&m, "model.json");
    let out = ok(&["evaluate", "--model", &model, "--synthetic", "blobs"]);
    let metrics: Value = serde_json::from_slice(&out.stdout).unwrap();
    let rca = metrics["rca"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&rca));
}

#[test]
fn missing_label_column_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let gen = path(dir.path(), "gen");
    ok(&["generate", "--kind", "blobs", "--out", &gen]);
    let csv = path(&dir.path().join("gen"), "blobs.csv");
    let out_dir = path(dir.path(), "m");
    let out = tsk(&["train", "--data", &csv, "--label-col", "nope", "--out", &out_dir]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_json(&out);
    assert_eq!(err["code"], "missing_label_column");
    assert_eq!(err["context"]["flag"], "--label-col");
    assert!(err["message"].as_str().unwrap().contains("nope"));
}

#[test]
fn bad_flags_and_unknown_datasets_exit_with_usage() {
    let out = tsk(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["code"], "usage");

    let dir = TempDir::new().unwrap();
    let out_dir = path(dir.path(), "m");
    let out = tsk(&["train", "--synthetic", "mystery", "--out", &out_dir]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["context"]["flag"], "--synthetic");

    let out = tsk(&["train", "--data", "/definitely/not/here.csv", "--label-col", "y", "--out", &out_dir]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn benchmark_emits_one_row_per_run_and_consistent_aggregates() {
    let dir = TempDir::new().unwrap();
    let out = path(dir.path(), "b");
    let mut args = vec!["benchmark", "--synthetic", "blobs", "--splits", "30", "--out", &out, "--subsample-runs", "2"];
    args.extend_from_slice(&CHEAP);
    ok(&args);
    let b = dir.path().join("b");
    for f in ["report.json", "metrics.csv", "aggregates.csv", "comparisons.csv"] {
        assert!(b.join(f).exists(), "{f}");
    }
    let rows = read_csv(&b.join("metrics.csv"));
    assert_eq!(rows.len(), 60);
    let aggs = read_csv(&b.join("aggregates.csv"));
    assert_eq!(aggs.len(), 2);
    for agg in &aggs {
        let vals: Vec<f64> = rows
            .iter()
            .filter(|r| r["variant"] == agg["variant"])
            .map(|r| r["bca"].parse().unwrap())
            .collect();
        assert_eq!(vals.len(), 30);
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let sumsq: f64 = vals.iter().map(|v| v * v).sum();
        let std = ((sumsq - n * mean * mean) / (n - 1.0)).max(0.0).sqrt();
        let got_mean: f64 = agg["mean_bca"].parse().unwrap();
        let got_std: f64 = agg["std_bca"].parse().unwrap();
        assert!((got_mean - mean).abs() <= 1e-12, "{got_mean} vs {mean}");
        assert!((got_std - std).abs() <= 1e-9, "{got_std} vs {std}");
    }
    let report: Value = serde_json::from_str(&std::fs::read_to_string(b.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["n_splits"], 30);
    assert_eq!(report["config"]["train"]["loss"]["ur_target"], "inverse_rules");
}

#[test]
fn folded_model_matches_bn_model() {
    let dir = TempDir::new().unwrap();
    let m = train(dir.path(), "m", &["--variant", "MBGD-UR-BN"]);
    let folded = path(dir.path(), "folded.json");
    ok(&["fold", "--model", &path(&m, "model.json"), "--out", &folded]);
    let bn = TskModel::load(m.join("model.json")).unwrap();
    let plain = TskModel::load(&folded).unwrap();
    assert_eq!(plain.bn_variant(), tsk_core::BnVariant::None);

    let mut rng = seed::rng(11);
    let data = (0..100 * bn.dims()).map(|_| rng.random_range(-3.0..3.0)).collect();
    let x = Matrix::from_vec(100, bn.dims(), data).unwrap();
    for row in x.iter_rows() {
        let a = bn.forward(row, Mode::Eval).unwrap();
        let b = plain.forward(row, Mode::Eval).unwrap();
        for (u, v) in a.scores.iter().zip(&b.scores) {
            assert!((u - v).abs() <= 1e-9, "{u} vs {v}");
        }
    }
}

#[test]
fn global_bn_fold_is_rejected() {
    let dir = TempDir::new().unwrap();
    let m = train(dir.path(), "m", &["--variant", "MBGD-UR-GBN"]);
    let out = tsk(&["fold", "--model", &path(&m, "model.json"), "--out", &path(dir.path(), "f.json")]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_json(&out)["code"], "fold_not_applicable");
    assert!(!dir.path().join("f.json").exists());
}

#[test]
fn plain_model_fold_is_a_copy() {
    let dir = TempDir::new().unwrap();
    let m = train(dir.path(), "m", &["--variant", "MBGD"]);
    let folded = path(dir.path(), "f.json");
    let out = ok(&["fold", "--model", &path(&m, "model.json"), "--out", &folded]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    assert_eq!(TskModel::load(m.join("model.json")).unwrap(), TskModel::load(&folded).unwrap());
}

#[test]
fn sweep_runs_extremes_and_skips_oversized_batches() {
    let dir = TempDir::new().unwrap();
    let out = path(dir.path(), "s");
    // blobs has 600 samples, so the training split holds 420.
    let mut args = vec![
        "sweep-batch", "--synthetic", "blobs", "--sizes", "2,420,5000", "--splits", "2", "--out", &out, "--variant", "MBGD",
        "--subsample-runs", "1",
    ];
    args.extend_from_slice(&CHEAP[..6]);
    let res = ok(&args);
    assert!(String::from_utf8_lossy(&res.stderr).contains("5000"));
    let curve = read_csv(&dir.path().join("s/sweep_curve.csv"));
    let status: Vec<(&str, &str)> = curve.iter().map(|r| (r["batch_size"].as_str(), r["status"].as_str())).collect();
    assert_eq!(status, vec![("2", "ok"), ("420", "ok"), ("5000", "skipped")]);
    assert_eq!(read_csv(&dir.path().join("s/sweep_runs.csv")).len(), 4);
}

#[test]
fn inspect_exports_firing_diagnostics() {
    let dir = TempDir::new().unwrap();
    let m = train(dir.path(), "m", &[]);
    let out = path(dir.path(), "i");
    ok(&["inspect", "--model", &path(&m, "model.json"), "--synthetic", "blobs", "--bins", "5", "--out", &out]);
    let firing = read_csv(&dir.path().join("i/mean_firing.csv"));
    assert_eq!(firing.len(), 4);
    let total: f64 = firing.iter().map(|r| r["mean_firing"].parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() <= 1e-9);
    let hist = read_csv(&dir.path().join("i/entropy_histogram.csv"));
    assert_eq!(hist.len(), 5);
    assert_eq!(hist.iter().map(|r| r["count"].parse::<usize>().unwrap()).sum::<usize>(), 600);
}

#[test]
fn generate_suite_writes_each_member() {
    let dir = TempDir::new().unwrap();
    let out = path(dir.path(), "g");
    ok(&["generate", "--kind", "suite", "--out", &out]);
    for name in tsk_core::synthetic::SUITE {
        assert!(dir.path().join("g").join(format!("{name}.csv")).exists());
    }
}

#[test]
fn benchmark_output_does_not_depend_on_worker_count() {
    let dir = TempDir::new().unwrap();
    let run = |name: &str, jobs: &str| {
        let out = path(dir.path(), name);
        let mut args = vec!["benchmark", "--synthetic", "blobs", "--splits", "3", "--jobs", jobs, "--out", &out];
        args.extend_from_slice(&CHEAP[..6]);
        ok(&args);
        std::fs::read(dir.path().join(name).join("report.json")).unwrap()
    };
    assert_eq!(run("one", "1"), run("three", "3"));
}
