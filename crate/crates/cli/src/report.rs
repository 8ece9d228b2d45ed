//! Benchmark and sweep runners and their report files.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tsk_core::eval::DunnComparison;
use tsk_core::{dunn_fdr, Dataset, Matrix};

use crate::error::{CliError, CliResult};
use crate::experiment::{prepare_split, run_variant, ExperimentSpec, Variant};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub dataset: String,
    pub variant: Variant,
    pub split: usize,
    pub rca: f64,
    pub bca: f64,
    pub lambda: f64,
    pub final_epochs: usize,
    pub rule_variance: f64,
    pub mean_entropy: f64,
    pub absent_classes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub dataset: String,
    pub variant: Variant,
    pub split: usize,
    pub code: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub dataset: String,
    pub variant: Variant,
    pub runs: usize,
    pub mean_rca: f64,
    pub std_rca: f64,
    pub mean_bca: f64,
    pub std_bca: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// `rca` or `bca`.
    pub metric: String,
    pub datasets: Vec<String>,
    pub variants: Vec<Variant>,
    /// `ranks[dataset][variant]`, 1 = best.
    pub ranks: Vec<Vec<f64>>,
    pub mean_ranks: Vec<f64>,
    pub pairs: Vec<DunnComparison>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentSpec,
    pub rows: Vec<MetricRow>,
    pub aggregates: Vec<Aggregate>,
    pub comparisons: Vec<Comparison>,
    /// Why no comparison was run, when `comparisons` is empty.
    pub comparison_note: Option<String>,
    pub failures: Vec<Failure>,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn aggregate(rows: &[MetricRow], datasets: &[String], variants: &[Variant]) -> Vec<Aggregate> {
    let mut out = Vec::new();
    for ds in datasets {
        for &v in variants {
            let sel: Vec<&MetricRow> = rows.iter().filter(|r| &r.dataset == ds && r.variant == v).collect();
            if sel.is_empty() {
                continue;
            }
            let (mean_rca, std_rca) = mean_std(&sel.iter().map(|r| r.rca).collect::<Vec<_>>());
            let (mean_bca, std_bca) = mean_std(&sel.iter().map(|r| r.bca).collect::<Vec<_>>());
            out.push(Aggregate {
                dataset: ds.clone(),
                variant: v,
                runs: sel.len(),
                mean_rca,
                std_rca,
                mean_bca,
                std_bca,
            });
        }
    }
    out
}

/// Pairs to test: the proposed variant against every other one when it is
/// part of the run, all pairs otherwise.
fn comparison_pairs(variants: &[Variant]) -> Vec<(usize, usize)> {
    match variants.iter().position(|v| *v == Variant::MbgdUrBn) {
        Some(c) => (0..variants.len()).filter(|&j| j != c).map(|j| (c, j)).collect(),
        None => (0..variants.len())
            .flat_map(|i| (i + 1..variants.len()).map(move |j| (i, j)))
            .collect(),
    }
}

fn compare(aggregates: &[Aggregate], datasets: &[String], variants: &[Variant]) -> (Vec<Comparison>, Option<String>) {
    if variants.len() < 2 || datasets.len() < 2 {
        return (Vec::new(), Some("rank comparison needs at least 2 variants and 2 datasets".into()));
    }
    let mut out = Vec::new();
    let pairs = comparison_pairs(variants);
    for metric in ["rca", "bca"] {
        let mut rows = Vec::with_capacity(variants.len());
        for v in variants {
            let mut row = Vec::with_capacity(datasets.len());
            for ds in datasets {
                let Some(a) = aggregates.iter().find(|a| a.variant == *v && &a.dataset == ds) else {
                    return (Vec::new(), Some(format!("no successful runs for {v} on {ds}")));
                };
                row.push(if metric == "rca" { a.mean_rca } else { a.mean_bca });
            }
            rows.push(row);
        }
        let scores = Matrix::from_rows(&rows).expect("rectangular by construction");
        match dunn_fdr(&scores, Some(&pairs)) {
            Ok(res) => out.push(Comparison {
                metric: metric.into(),
                datasets: datasets.to_vec(),
                variants: variants.to_vec(),
                ranks: res.ranks,
                mean_ranks: res.mean_ranks,
                pairs: res.comparisons,
            }),
            Err(e) => return (Vec::new(), Some(format!("{metric}: {e}"))),
        }
    }
    (out, None)
}

fn thread_pool(jobs: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::usage(e.to_string(), serde_json::json!({"flag": "--jobs"})))
}

/// Runs every (dataset, split, variant) unit, `jobs` at a time. Results are
/// assembled in a fixed order, and each unit's seeds depend only on its
/// indices, so the report does not depend on `jobs`.
pub fn run_benchmark(spec: &ExperimentSpec, jobs: usize) -> CliResult<ExperimentReport> {
    spec.validate()?;
    let names: Vec<String> = spec.datasets.iter().map(|d| d.name()).collect();
    let data: Vec<Dataset> = spec.datasets.iter().map(|d| d.load()).collect::<CliResult<_>>()?;

    let units: Vec<(usize, usize, usize)> = (0..data.len())
        .flat_map(|d| (0..spec.n_splits).flat_map(move |s| (0..spec.variants.len()).map(move |v| (d, s, v))))
        .collect();
    let results: Vec<CliResult<MetricRow>> = thread_pool(jobs)?.install(|| {
        units
            .par_iter()
            .map(|&(d, s, v)| {
                let variant = spec.variants[v];
                let split = prepare_split(&data[d], spec.split_seed(d, s))?;
                let out = run_variant(
                    &split,
                    variant,
                    &spec.train,
                    spec.lambda,
                    &spec.lambda_grid,
                    spec.training_seed(d, s),
                )?;
                Ok(MetricRow {
                    dataset: names[d].clone(),
                    variant,
                    split: s,
                    rca: out.metrics.rca,
                    bca: out.metrics.bca,
                    lambda: out.lambda,
                    final_epochs: out.final_epochs,
                    rule_variance: out.rule_variance,
                    mean_entropy: out.mean_entropy,
                    absent_classes: out.metrics.absent_classes,
                })
            })
            .collect()
    });

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (&(d, s, v), res) in units.iter().zip(results) {
        match res {
            Ok(row) => rows.push(row),
            Err(e) => failures.push(Failure {
                dataset: names[d].clone(),
                variant: spec.variants[v],
                split: s,
                code: e.code,
                message: e.message,
            }),
        }
    }
    let aggregates = aggregate(&rows, &names, &spec.variants);
    let (comparisons, comparison_note) = compare(&aggregates, &names, &spec.variants);
    Ok(ExperimentReport {
        config: spec.clone(),
        rows,
        aggregates,
        comparisons,
        comparison_note,
        failures,
    })
}

fn fmt_list(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

/// Writes `report.json`, `metrics.csv`, `aggregates.csv` and
/// `comparisons.csv` into `dir`.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)? + "\n")?;

    let mut w = csv::Writer::from_path(dir.join("metrics.csv"))?;
    w.write_record([
        "dataset",
        "variant",
        "split",
        "rca",
        "bca",
        "lambda",
        "final_epochs",
        "rule_variance",
        "mean_entropy",
        "absent_classes",
    ])?;
    for r in &report.rows {
        w.write_record([
            r.dataset.clone(),
            r.variant.to_string(),
            r.split.to_string(),
            r.rca.to_string(),
            r.bca.to_string(),
            r.lambda.to_string(),
            r.final_epochs.to_string(),
            r.rule_variance.to_string(),
            r.mean_entropy.to_string(),
            fmt_list(&r.absent_classes),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("aggregates.csv"))?;
    w.write_record(["dataset", "variant", "runs", "mean_rca", "std_rca", "mean_bca", "std_bca"])?;
    for a in &report.aggregates {
        w.write_record([
            a.dataset.clone(),
            a.variant.to_string(),
            a.runs.to_string(),
            a.mean_rca.to_string(),
            a.std_rca.to_string(),
            a.mean_bca.to_string(),
            a.std_bca.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("comparisons.csv"))?;
    w.write_record(["metric", "first", "second", "z", "p_raw", "p_adjusted"])?;
    for c in &report.comparisons {
        for p in &c.pairs {
            w.write_record([
                c.metric.clone(),
                c.variants[p.first].to_string(),
                c.variants[p.second].to_string(),
                p.z.to_string(),
                p.p_raw.to_string(),
                p.p_adjusted.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub batch_size: usize,
    pub split: usize,
    pub rca: f64,
    pub bca: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub batch_size: usize,
    /// `ok`, `skipped` (larger than the training set) or `failed`.
    pub status: String,
    pub runs: usize,
    pub mean_rca: Option<f64>,
    pub mean_bca: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config: ExperimentSpec,
    pub variant: Variant,
    pub rows: Vec<SweepRow>,
    pub curve: Vec<CurvePoint>,
    pub failures: Vec<String>,
}

/// Trains `variant` on the first dataset of `spec` for every batch size over
/// `spec.n_splits` splits. Sizes larger than the training set are reported
/// as skipped.
pub fn run_sweep(spec: &ExperimentSpec, variant: Variant, sizes: &[usize], jobs: usize) -> CliResult<SweepReport> {
    let source = spec
        .datasets
        .first()
        .ok_or_else(|| CliError::usage("a dataset is required", serde_json::json!({"flag": "--data"})))?;
    if sizes.is_empty() {
        return Err(CliError::usage("no batch sizes given", serde_json::json!({"flag": "--sizes"})));
    }
    let data = source.load()?;
    let n_train = data.len() * 7 / 10;
    let units: Vec<(usize, usize)> = sizes
        .iter()
        .copied()
        .filter(|&b| b >= 2 && b <= n_train)
        .flat_map(|b| (0..spec.n_splits).map(move |s| (b, s)))
        .collect();
    let results: Vec<CliResult<SweepRow>> = thread_pool(jobs)?.install(|| {
        units
            .par_iter()
            .map(|&(b, s)| {
                let split = prepare_split(&data, spec.split_seed(0, s))?;
                let base = tsk_core::TrainConfig {
                    batch_size: b,
                    ..spec.train.clone()
                };
                let out = run_variant(&split, variant, &base, spec.lambda, &spec.lambda_grid, spec.training_seed(0, s))?;
                Ok(SweepRow {
                    batch_size: b,
                    split: s,
                    rca: out.metrics.rca,
                    bca: out.metrics.bca,
                })
            })
            .collect()
    });
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (&(b, s), r) in units.iter().zip(results) {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => failures.push(format!("batch {b}, split {s}: {}", e.message)),
        }
    }
    let curve = sizes
        .iter()
        .map(|&b| {
            if b < 2 || b > n_train {
                return CurvePoint {
                    batch_size: b,
                    status: "skipped".into(),
                    runs: 0,
                    mean_rca: None,
                    mean_bca: None,
                };
            }
            let sel: Vec<&SweepRow> = rows.iter().filter(|r| r.batch_size == b).collect();
            if sel.is_empty() {
                return CurvePoint {
                    batch_size: b,
                    status: "failed".into(),
                    runs: 0,
                    mean_rca: None,
                    mean_bca: None,
                };
            }
            let n = sel.len() as f64;
            CurvePoint {
                batch_size: b,
                status: "ok".into(),
                runs: sel.len(),
                mean_rca: Some(sel.iter().map(|r| r.rca).sum::<f64>() / n),
                mean_bca: Some(sel.iter().map(|r| r.bca).sum::<f64>() / n),
            }
        })
        .collect();
    Ok(SweepReport {
        config: spec.clone(),
        variant,
        rows,
        curve,
        failures,
    })
}

/// Writes `sweep.json`, `sweep_runs.csv` and `sweep_curve.csv` into `dir`.
pub fn write_sweep(report: &SweepReport, dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("sweep.json"), serde_json::to_string_pretty(report)? + "\n")?;
    let mut w = csv::Writer::from_path(dir.join("sweep_runs.csv"))?;
    w.write_record(["batch_size", "split", "rca", "bca"])?;
    for r in &report.rows {
        w.write_record([r.batch_size.to_string(), r.split.to_string(), r.rca.to_string(), r.bca.to_string()])?;
    }
    w.flush()?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_path(dir.join("sweep_curve.csv"))?;
    w.write_record(["batch_size", "status", "runs", "mean_rca", "mean_bca"])?;
    for p in &report.curve {
        w.write_record([
            p.batch_size.to_string(),
            p.status.clone(),
            p.runs.to_string(),
            opt(p.mean_rca),
            opt(p.mean_bca),
        ])?;
    }
    w.flush()?;
    Ok(())
}
