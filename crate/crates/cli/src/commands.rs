//! Command-line interface: argument definitions and subcommand drivers.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tsk_core::train::{self, LAMBDA_GRID};
use tsk_core::{
    encode, evaluate, fold_model, load_csv, synthetic, BnVariant, Dataset, Encoder, FiringDiagnostics, OptimizerConfig,
    Preprocessor, TrainConfig, TskModel, UrTarget,
};

use crate::error::{CliError, CliResult};
use crate::experiment::{synthetic_dataset, synthetic_sources, DatasetSource, ExperimentSpec, Variant};
use crate::report::{run_benchmark, run_sweep, write_report, write_sweep};

#[derive(Debug, Parser)]
#[command(name = "tsk", version, about = "Train, evaluate and benchmark TSK fuzzy classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model on a whole dataset with the early-stopping protocol.
    Train(TrainCmd),
    /// Score a saved model on a dataset.
    Evaluate(EvaluateCmd),
    /// Repeated 70/30 splits over datasets and variants, with rank statistics.
    Benchmark(BenchmarkCmd),
    /// Test accuracy as a function of the mini-batch size.
    SweepBatch(SweepCmd),
    /// Fold a BN model's normalization into plain consequents.
    Fold(FoldCmd),
    /// Export firing-level diagnostics of a saved model on a dataset.
    Inspect(InspectCmd),
    /// Write the built-in synthetic datasets as CSV.
    Generate(GenerateCmd),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BnArg {
    None,
    Consequent,
    Global,
    Rule,
}

impl From<BnArg> for BnVariant {
    fn from(b: BnArg) -> Self {
        match b {
            BnArg::None => BnVariant::None,
            BnArg::Consequent => BnVariant::Consequent,
            BnArg::Global => BnVariant::Global,
            BnArg::Rule => BnVariant::RuleSpecific,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Adabound,
    Adam,
    Sgd,
}

#[derive(Clone, Debug, Args)]
pub struct DataArgs {
    /// CSV file with a header line (repeatable for benchmark).
    #[arg(long)]
    pub data: Vec<PathBuf>,
    /// Built-in dataset instead of --data: blobs, vehicle, biodeg, drd,
    /// satellite or suite (vehicle, biodeg and drd).
    #[arg(long, conflicts_with = "data")]
    pub synthetic: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub synthetic_seed: u64,
    #[arg(long)]
    pub label_col: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub categorical_cols: Vec<String>,
}

impl DataArgs {
    pub fn sources(&self) -> CliResult<Vec<DatasetSource>> {
        if let Some(kind) = &self.synthetic {
            return Ok(synthetic_sources(kind, self.synthetic_seed));
        }
        if self.data.is_empty() {
            return Err(CliError::usage("--data or --synthetic is required", json!({"flag": "--data"})));
        }
        let label_col = self
            .label_col
            .clone()
            .ok_or_else(|| CliError::usage("--label-col is required with --data", json!({"flag": "--label-col"})))?;
        Ok(self
            .data
            .iter()
            .map(|p| DatasetSource::Csv {
                path: p.clone(),
                label_col: label_col.clone(),
                categorical_cols: self.categorical_cols.clone(),
            })
            .collect())
    }
}

#[derive(Clone, Debug, Args)]
pub struct TrainingArgs {
    /// Algorithm variant; sets the UR and BN switches.
    #[arg(long)]
    pub variant: Vec<Variant>,
    #[arg(long, default_value_t = 20)]
    pub rules: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Fixed UR weight; without it UR variants select one by cross-validation.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = LAMBDA_GRID.to_vec())]
    pub lambda_grid: Vec<f64>,
    /// 1/R, 1/C or a value in (0, 1].
    #[arg(long, default_value = "1/R")]
    pub ur_target: UrTarget,
    /// Overrides the BN switch implied by --variant.
    #[arg(long, value_enum)]
    pub bn: Option<BnArg>,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adabound)]
    pub optimizer: OptimizerArg,
    #[arg(long, default_value_t = 2000)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 40)]
    pub patience: usize,
    #[arg(long, default_value_t = 0.2)]
    pub subsample_fraction: f64,
    #[arg(long, default_value_t = 5)]
    pub subsample_runs: usize,
    #[arg(long, default_value_t = 5)]
    pub cv_folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl TrainingArgs {
    pub fn config(&self) -> TrainConfig {
        let optimizer = match self.optimizer {
            OptimizerArg::Adabound => OptimizerConfig::adabound(self.lr),
            OptimizerArg::Adam => OptimizerConfig::Adam {
                lr: self.lr,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            OptimizerArg::Sgd => OptimizerConfig::Sgd {
                lr: self.lr,
                momentum: 0.9,
            },
        };
        let mut cfg = TrainConfig {
            rules: self.rules,
            batch_size: self.batch_size,
            optimizer,
            max_epochs: self.max_epochs,
            patience: self.patience,
            subsample_fraction: self.subsample_fraction,
            subsample_runs: self.subsample_runs,
            cv_folds: self.cv_folds,
            seed: self.seed,
            ..TrainConfig::default()
        };
        cfg.loss.alpha = self.alpha;
        cfg.loss.ur_target = self.ur_target;
        cfg
    }

    fn variants(&self, default: &[Variant]) -> Vec<Variant> {
        if self.variant.is_empty() {
            default.to_vec()
        } else {
            self.variant.clone()
        }
    }

    fn single_variant(&self) -> CliResult<Variant> {
        match self.variant.as_slice() {
            [] => Ok(Variant::MbgdUrBn),
            [v] => Ok(*v),
            _ => Err(CliError::usage("this command takes one --variant", json!({"flag": "--variant"}))),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    /// Output directory for model.json, trace.csv and pipeline.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateCmd {
    #[arg(long)]
    pub model: PathBuf,
    /// Preprocessing saved by `train`; defaults to pipeline.json next to the
    /// model.
    #[arg(long)]
    pub pipeline: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Write the metrics JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchmarkCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    /// Read the whole experiment from a JSON spec instead of flags.
    #[arg(long, conflicts_with_all = ["data", "synthetic"])]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    pub splits: usize,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[arg(long, value_delimiter = ',', default_values_t = vec![16, 32, 64, 128, 256, 512, 1024, 2048])]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 30)]
    pub splits: usize,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FoldCmd {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InspectCmd {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub pipeline: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateCmd {
    /// blobs, vehicle, biodeg, drd, satellite or suite.
    #[arg(long)]
    pub kind: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Everything needed to turn a raw CSV into model inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub label_col: Option<String>,
    pub categorical_cols: Vec<String>,
    /// `None` for synthetic data, which needs no encoding.
    pub encoder: Option<Encoder>,
    pub preprocessor: Preprocessor,
}

#[derive(Clone, Debug, Serialize)]
struct TrainSummary<'a> {
    config: &'a TrainConfig,
    variant: Variant,
    lambda_scores: Option<Vec<f64>>,
    stop_epochs: &'a [usize],
    final_epochs: usize,
}

/// Loads the single dataset named by `args`, returning the encoder when it
/// came from CSV.
fn load_single(args: &DataArgs) -> CliResult<(Dataset, Option<Encoder>)> {
    if args.data.len() > 1 {
        return Err(CliError::usage("this command takes one --data file", json!({"flag": "--data"})));
    }
    if let Some(kind) = &args.synthetic {
        return Ok((synthetic_dataset(kind, args.synthetic_seed)?, None));
    }
    match args.sources()?.remove(0) {
        DatasetSource::Csv {
            path,
            label_col,
            categorical_cols,
        } => {
            if !path.exists() {
                return Err(CliError::data(
                    format!("dataset `{}` not found", path.display()),
                    json!({"flag": "--data", "path": path}),
                ));
            }
            let (ds, enc) = encode(&load_csv(&path, &label_col, &categorical_cols)?)?;
            Ok((ds, Some(enc)))
        }
        DatasetSource::Synthetic { .. } => unreachable!("handled above"),
    }
}

/// Loads evaluation data and applies a saved pipeline.
fn load_with_pipeline(args: &DataArgs, model: &Path, pipeline: Option<&Path>) -> CliResult<Dataset> {
    let path = pipeline
        .map(Path::to_path_buf)
        .unwrap_or_else(|| model.with_file_name("pipeline.json"));
    let pipe: Pipeline = serde_json::from_str(&fs::read_to_string(&path).map_err(|e| {
        CliError::data(
            format!("cannot read pipeline `{}`: {e}", path.display()),
            json!({"flag": "--pipeline", "path": path}),
        )
    })?)?;
    let raw = if let Some(kind) = &args.synthetic {
        synthetic_dataset(kind, args.synthetic_seed)?
    } else {
        let [data] = args.data.as_slice() else {
            return Err(CliError::usage("one --data file is required", json!({"flag": "--data"})));
        };
        let label = args
            .label_col
            .clone()
            .or(pipe.label_col.clone())
            .ok_or_else(|| CliError::usage("--label-col is required", json!({"flag": "--label-col"})))?;
        let cats = if args.categorical_cols.is_empty() {
            pipe.categorical_cols.clone()
        } else {
            args.categorical_cols.clone()
        };
        let table = load_csv(data, &label, &cats)?;
        match &pipe.encoder {
            Some(enc) => enc.transform(&table)?,
            None => encode(&table)?.0,
        }
    };
    Ok(raw.normalized(&pipe.preprocessor)?)
}

pub fn cmd_train(cmd: &TrainCmd) -> CliResult<()> {
    let (raw, encoder) = load_single(&cmd.data)?;
    let (pre, _) = Preprocessor::fit_transform(&raw.x)?;
    let ds = raw.normalized(&pre)?;
    let variant = cmd.training.single_variant()?;
    let mut cfg = cmd.training.config();
    cfg.bn_variant = cmd.training.bn.map(Into::into).unwrap_or(variant.bn());
    let mut lambda_scores = None;
    let lambda = match cmd.training.lambda {
        Some(l) => l,
        None if variant.uses_ur() => {
            let sel = train::select_lambda_cv(&ds, &cmd.training.lambda_grid, &cfg)?;
            lambda_scores = Some(sel.mean_scores);
            sel.lambda
        }
        None => 0.0,
    };
    cfg = cfg.with_lambda(lambda);
    let fit = train::fit_early_stopping(&ds, &cfg)?;
    if !fit.model.antecedents.centers().iter().all(|v| v.is_finite()) {
        return Err(tsk_core::Error::NonFinite("trained parameters".into()).into());
    }

    fs::create_dir_all(&cmd.out)?;
    fit.model.save(cmd.out.join("model.json"))?;
    fit.trace.write_csv(fs::File::create(cmd.out.join("trace.csv"))?)?;
    let pipe = Pipeline {
        label_col: cmd.data.label_col.clone(),
        categorical_cols: cmd.data.categorical_cols.clone(),
        encoder,
        preprocessor: pre,
    };
    fs::write(cmd.out.join("pipeline.json"), serde_json::to_string_pretty(&pipe)?)?;
    let summary = TrainSummary {
        config: &cfg,
        variant,
        lambda_scores,
        stop_epochs: &fit.stop_epochs,
        final_epochs: fit.final_epochs,
    };
    fs::write(cmd.out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

pub fn cmd_evaluate(cmd: &EvaluateCmd) -> CliResult<()> {
    let model = TskModel::load(&cmd.model)?;
    let ds = load_with_pipeline(&cmd.data, &cmd.model, cmd.pipeline.as_deref())?;
    let metrics = evaluate(&model, &ds)?;
    let text = serde_json::to_string_pretty(&metrics)?;
    match &cmd.out {
        Some(p) => fs::write(p, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn experiment_spec(data: &DataArgs, training: &TrainingArgs, splits: usize, spec: Option<&Path>) -> CliResult<ExperimentSpec> {
    if let Some(path) = spec {
        return Ok(serde_json::from_str(&fs::read_to_string(path)?)?);
    }
    let mut train = training.config();
    if let Some(bn) = training.bn {
        train.bn_variant = bn.into();
    }
    Ok(ExperimentSpec {
        datasets: data.sources()?,
        variants: training.variants(&[Variant::Mbgd, Variant::MbgdUrBn]),
        train,
        lambda: training.lambda,
        lambda_grid: training.lambda_grid.clone(),
        n_splits: splits,
        seed: training.seed,
    })
}

pub fn cmd_benchmark(cmd: &BenchmarkCmd) -> CliResult<()> {
    let spec = experiment_spec(&cmd.data, &cmd.training, cmd.splits, cmd.spec.as_deref())?;
    let report = run_benchmark(&spec, cmd.jobs)?;
    write_report(&report, &cmd.out)?;
    for f in &report.failures {
        eprintln!("warning: {} {} split {}: {}", f.dataset, f.variant, f.split, f.message);
    }
    Ok(())
}

pub fn cmd_sweep(cmd: &SweepCmd) -> CliResult<()> {
    let spec = experiment_spec(&cmd.data, &cmd.training, cmd.splits, None)?;
    spec.validate()?;
    let variant = cmd.training.single_variant()?;
    let report = run_sweep(&spec, variant, &cmd.sizes, cmd.jobs)?;
    for p in report.curve.iter().filter(|p| p.status == "skipped") {
        eprintln!("warning: batch size {} skipped: outside [2, training set size]", p.batch_size);
    }
    write_sweep(&report, &cmd.out)
}

pub fn cmd_fold(cmd: &FoldCmd) -> CliResult<()> {
    let model = TskModel::load(&cmd.model)?;
    if model.bn_variant() == BnVariant::None {
        eprintln!("warning: model has no batch normalization; writing an unchanged copy");
    }
    let folded = fold_model(&model)?;
    if let Some(dir) = cmd.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    folded.save(&cmd.out)?;
    Ok(())
}

pub fn cmd_inspect(cmd: &InspectCmd) -> CliResult<()> {
    let model = TskModel::load(&cmd.model)?;
    let ds = load_with_pipeline(&cmd.data, &cmd.model, cmd.pipeline.as_deref())?;
    let diag: FiringDiagnostics = tsk_core::firing_diagnostics(&model, &ds.x)?;
    fs::create_dir_all(&cmd.out)?;

    let mut w = csv::Writer::from_path(cmd.out.join("mean_firing.csv"))?;
    w.write_record(["rule", "mean_firing"])?;
    for (r, f) in diag.mean_firing.iter().enumerate() {
        w.write_record([r.to_string(), f.to_string()])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(cmd.out.join("entropy_histogram.csv"))?;
    w.write_record(["lower", "upper", "count"])?;
    for (lo, hi, n) in diag.entropy_histogram(cmd.bins) {
        w.write_record([lo.to_string(), hi.to_string(), n.to_string()])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(cmd.out.join("entropy.csv"))?;
    w.write_record(["sample", "entropy"])?;
    for (i, e) in diag.entropy.iter().enumerate() {
        w.write_record([i.to_string(), e.to_string()])?;
    }
    w.flush()?;

    let summary = json!({
        "rules": model.rules(),
        "samples": ds.len(),
        "rule_variance": diag.rule_variance(),
        "mean_entropy": diag.mean_entropy(),
        "max_entropy": (model.rules() as f64).ln(),
    });
    fs::write(cmd.out.join("firing_summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

pub fn cmd_generate(cmd: &GenerateCmd) -> CliResult<()> {
    fs::create_dir_all(&cmd.out)?;
    for source in synthetic_sources(&cmd.kind, cmd.seed) {
        let DatasetSource::Synthetic { kind, seed } = &source else {
            unreachable!("synthetic sources only");
        };
        let ds = synthetic_dataset(kind, *seed)?;
        synthetic::write_csv(&ds, fs::File::create(cmd.out.join(format!("{kind}.csv")))?)?;
    }
    Ok(())
}

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Train(c) => cmd_train(c),
        Command::Evaluate(c) => cmd_evaluate(c),
        Command::Benchmark(c) => cmd_benchmark(c),
        Command::SweepBatch(c) => cmd_sweep(c),
        Command::Fold(c) => cmd_fold(c),
        Command::Inspect(c) => cmd_inspect(c),
        Command::Generate(c) => cmd_generate(c),
    }
}
