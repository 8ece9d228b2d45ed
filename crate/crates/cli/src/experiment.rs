//! Experiment specification and the per-split train/evaluate unit.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use tsk_core::seed;
use tsk_core::train::{self, LAMBDA_GRID};
use tsk_core::{
    encode, evaluate, firing_diagnostics, load_csv, split_70_30, synthetic, BnVariant, Dataset, Metrics, Preprocessor,
    TrainConfig,
};

use crate::error::{CliError, CliResult};

/// Stream tags for seeds derived by the harness.
pub mod stream {
    pub const DATASET: u64 = 0x1000;
    pub const TRAINING: u64 = 0x1100;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "MBGD")]
    Mbgd,
    #[serde(rename = "MBGD-BN")]
    MbgdBn,
    #[serde(rename = "MBGD-UR")]
    MbgdUr,
    #[serde(rename = "MBGD-UR-BN")]
    MbgdUrBn,
    #[serde(rename = "MBGD-UR-GBN")]
    MbgdUrGbn,
    #[serde(rename = "MBGD-UR-RBN")]
    MbgdUrRbn,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Mbgd,
        Variant::MbgdBn,
        Variant::MbgdUr,
        Variant::MbgdUrBn,
        Variant::MbgdUrGbn,
        Variant::MbgdUrRbn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Mbgd => "MBGD",
            Variant::MbgdBn => "MBGD-BN",
            Variant::MbgdUr => "MBGD-UR",
            Variant::MbgdUrBn => "MBGD-UR-BN",
            Variant::MbgdUrGbn => "MBGD-UR-GBN",
            Variant::MbgdUrRbn => "MBGD-UR-RBN",
        }
    }

    pub fn uses_ur(self) -> bool {
        !matches!(self, Variant::Mbgd | Variant::MbgdBn)
    }

    pub fn bn(self) -> BnVariant {
        match self {
            Variant::Mbgd | Variant::MbgdUr => BnVariant::None,
            Variant::MbgdBn | Variant::MbgdUrBn => BnVariant::Consequent,
            Variant::MbgdUrGbn => BnVariant::Global,
            Variant::MbgdUrRbn => BnVariant::RuleSpecific,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    /// Case-insensitive, with or without a `TSK-` prefix.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let up = s.trim().to_ascii_uppercase();
        let bare = up.strip_prefix("TSK-").unwrap_or(&up);
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == bare)
            .ok_or_else(|| format!("unknown variant `{s}`; expected one of MBGD, MBGD-BN, MBGD-UR, MBGD-UR-BN, MBGD-UR-GBN, MBGD-UR-RBN"))
    }
}

/// Where a dataset comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSource {
    Csv {
        path: PathBuf,
        label_col: String,
        #[serde(default)]
        categorical_cols: Vec<String>,
    },
    /// A built-in generator: `blobs`, `vehicle`, `biodeg`, `drd` or
    /// `satellite`.
    Synthetic { kind: String, seed: u64 },
}

impl DatasetSource {
    pub fn name(&self) -> String {
        match self {
            DatasetSource::Csv { path, .. } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string()),
            DatasetSource::Synthetic { kind, .. } => kind.clone(),
        }
    }

    /// Encoded, not yet normalized.
    pub fn load(&self) -> CliResult<Dataset> {
        match self {
            DatasetSource::Csv {
                path,
                label_col,
                categorical_cols,
            } => {
                if !path.exists() {
                    return Err(CliError::data(
                        format!("dataset `{}` not found", path.display()),
                        serde_json::json!({"flag": "--data", "path": path}),
                    ));
                }
                let table = load_csv(path, label_col, categorical_cols)?;
                Ok(encode(&table)?.0)
            }
            DatasetSource::Synthetic { kind, seed } => synthetic_dataset(kind, *seed),
        }
    }
}

pub fn synthetic_dataset(kind: &str, seed: u64) -> CliResult<Dataset> {
    synthetic::by_name(kind, seed).map_err(|_| {
        let mut known = vec!["blobs"];
        known.extend(synthetic::NAMES);
        known.push("suite");
        CliError::usage(
            format!("unknown synthetic dataset `{kind}`"),
            serde_json::json!({"flag": "--synthetic", "known": known}),
        )
    })
}

/// Expands `suite` into its members, with the same per-member seeds as
/// [`synthetic::suite`]; other kinds pass through.
pub fn synthetic_sources(kind: &str, seed: u64) -> Vec<DatasetSource> {
    if kind == "suite" {
        return synthetic::SUITE
            .iter()
            .enumerate()
            .map(|(i, name)| DatasetSource::Synthetic {
                kind: name.to_string(),
                seed: tsk_core::seed::derive(seed, synthetic::SUITE_STREAM, i as u64),
            })
            .collect();
    }
    vec![DatasetSource::Synthetic {
        kind: kind.to_owned(),
        seed,
    }]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub datasets: Vec<DatasetSource>,
    pub variants: Vec<Variant>,
    pub train: TrainConfig,
    /// Fixed UR weight for UR variants; `None` selects it by CV over
    /// `lambda_grid`.
    pub lambda: Option<f64>,
    pub lambda_grid: Vec<f64>,
    pub n_splits: usize,
    pub seed: u64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            datasets: Vec::new(),
            variants: vec![Variant::Mbgd, Variant::MbgdUrBn],
            train: TrainConfig::default(),
            lambda: None,
            lambda_grid: LAMBDA_GRID.to_vec(),
            n_splits: 30,
            seed: 0,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> CliResult<()> {
        if self.variants.is_empty() {
            return Err(CliError::usage("at least one variant is required", serde_json::json!({"flag": "--variant"})));
        }
        if self.datasets.is_empty() {
            return Err(CliError::usage("at least one dataset is required", serde_json::json!({"flag": "--data"})));
        }
        if self.n_splits == 0 {
            return Err(CliError::usage("--splits must be >= 1", serde_json::json!({"flag": "--splits"})));
        }
        if self.lambda.is_none() && self.lambda_grid.is_empty() && self.variants.iter().any(|v| v.uses_ur()) {
            return Err(CliError::usage("empty lambda grid", serde_json::json!({"flag": "--lambda-grid"})));
        }
        self.train.validate()?;
        Ok(())
    }

    /// Seed of split `split` of dataset `dataset`.
    pub fn split_seed(&self, dataset: usize, split: usize) -> u64 {
        seed::derive(seed::derive(self.seed, stream::DATASET, dataset as u64), seed::stream::SPLIT, split as u64)
    }

    /// Training seed shared by all variants on one split, so variants are
    /// compared from the same initialization.
    pub fn training_seed(&self, dataset: usize, split: usize) -> u64 {
        seed::derive(self.split_seed(dataset, split), stream::TRAINING, 0)
    }
}

/// Train and test sets of one split, z-normalized with training statistics.
pub struct PreparedSplit {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn prepare_split(ds: &Dataset, seed: u64) -> CliResult<PreparedSplit> {
    let (train, test) = split_70_30(ds, seed)?;
    let (pre, _) = Preprocessor::fit_transform(&train.x)?;
    Ok(PreparedSplit {
        train: train.normalized(&pre)?,
        test: test.normalized(&pre)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub metrics: Metrics,
    pub lambda: f64,
    pub final_epochs: usize,
    pub stop_epochs: Vec<usize>,
    pub rule_variance: f64,
    pub mean_entropy: f64,
    pub mean_firing: Vec<f64>,
}

/// Configuration a variant trains with (before any lambda selection).
pub fn variant_config(base: &TrainConfig, variant: Variant, seed: u64) -> TrainConfig {
    TrainConfig {
        bn_variant: variant.bn(),
        seed,
        ..base.clone()
    }
    .with_lambda(0.0)
}

/// Lambda selection (UR variants), early-stopped fit, test evaluation.
pub fn run_variant(
    split: &PreparedSplit,
    variant: Variant,
    base: &TrainConfig,
    lambda: Option<f64>,
    grid: &[f64],
    seed: u64,
) -> CliResult<RunOutcome> {
    let mut cfg = variant_config(base, variant, seed);
    if variant.uses_ur() {
        let lam = match lambda {
            Some(l) => l,
            None => train::select_lambda_cv(&split.train, grid, &cfg)?.lambda,
        };
        cfg = cfg.with_lambda(lam);
    }
    let fit = train::fit_early_stopping(&split.train, &cfg)?;
    let metrics = evaluate(&fit.model, &split.test)?;
    let diag = firing_diagnostics(&fit.model, &split.test.x)?;
    Ok(RunOutcome {
        metrics,
        lambda: cfg.loss.lambda,
        final_epochs: fit.final_epochs,
        stop_epochs: fit.stop_epochs,
        rule_variance: diag.rule_variance(),
        mean_entropy: diag.mean_entropy(),
        mean_firing: diag.mean_firing,
    })
}
