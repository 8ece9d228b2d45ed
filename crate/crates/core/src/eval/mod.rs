//! Classification metrics and firing-level diagnostics.

mod stats;

pub use stats::{benjamini_hochberg, dunn_fdr, rank_descending, DunnComparison, DunnResult};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::TskModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Raw classification accuracy.
    pub rca: f64,
    /// Balanced classification accuracy: mean recall over classes present in
    /// the test set.
    pub bca: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
    /// Classes with no test samples; excluded from `bca`.
    pub absent_classes: Vec<usize>,
}

impl Metrics {
    pub fn from_predictions(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<Metrics> {
        if y_true.len() != y_pred.len() {
            return Err(Error::dims("predictions", y_true.len(), y_pred.len()));
        }
        if y_true.is_empty() {
            return Err(Error::TooFewSamples { required: 1, found: 0 });
        }
        let mut confusion = vec![vec![0usize; n_classes]; n_classes];
        for (&t, &p) in y_true.iter().zip(y_pred) {
            if t >= n_classes || p >= n_classes {
                return Err(Error::InvalidConfig(format!("label outside 0..{n_classes}")));
            }
            confusion[t][p] += 1;
        }
        let correct: usize = (0..n_classes).map(|c| confusion[c][c]).sum();
        let rca = correct as f64 / y_true.len() as f64;
        let mut absent_classes = Vec::new();
        let mut recall_sum = 0.0;
        let mut present = 0usize;
        for (c, row) in confusion.iter().enumerate() {
            let total: usize = row.iter().sum();
            if total == 0 {
                absent_classes.push(c);
            } else {
                recall_sum += row[c] as f64 / total as f64;
                present += 1;
            }
        }
        Ok(Metrics {
            rca,
            bca: recall_sum / present as f64,
            confusion,
            absent_classes,
        })
    }
}

/// Eval-mode metrics of `model` on `test`.
pub fn evaluate(model: &TskModel, test: &Dataset) -> Result<Metrics> {
    if test.n_classes != model.classes() {
        return Err(Error::dims("classes", model.classes(), test.n_classes));
    }
    let pred = model.predict_batch(&test.x)?;
    Metrics::from_predictions(&test.y, &pred, test.n_classes)
}

/// Shannon entropy (natural log) of a normalized firing profile, with
/// `0 ln 0 = 0`.
pub fn firing_entropy(profile: &[f64]) -> f64 {
    -profile
        .iter()
        .filter(|f| **f > 0.0)
        .map(|f| f * f.ln())
        .sum::<f64>()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiringDiagnostics {
    /// Mean normalized firing level of each rule over the samples.
    pub mean_firing: Vec<f64>,
    /// Per-sample firing entropy.
    pub entropy: Vec<f64>,
}

impl FiringDiagnostics {
    pub fn from_profiles(firing: &Matrix) -> Self {
        let n = firing.rows().max(1) as f64;
        let mut mean_firing = vec![0.0; firing.cols()];
        let mut entropy = Vec::with_capacity(firing.rows());
        for row in firing.iter_rows() {
            for (m, f) in mean_firing.iter_mut().zip(row) {
                *m += f;
            }
            entropy.push(firing_entropy(row));
        }
        mean_firing.iter_mut().for_each(|m| *m /= n);
        Self { mean_firing, entropy }
    }

    /// Population variance of `mean_firing` across rules.
    pub fn rule_variance(&self) -> f64 {
        let r = self.mean_firing.len() as f64;
        let mu = self.mean_firing.iter().sum::<f64>() / r;
        self.mean_firing.iter().map(|m| (m - mu) * (m - mu)).sum::<f64>() / r
    }

    pub fn mean_entropy(&self) -> f64 {
        self.entropy.iter().sum::<f64>() / self.entropy.len().max(1) as f64
    }

    /// Equal-width histogram of entropies over `[0, ln R]`. Returns
    /// `(lower edge, upper edge, count)` per bin.
    pub fn entropy_histogram(&self, bins: usize) -> Vec<(f64, f64, usize)> {
        let bins = bins.max(1);
        let top = (self.mean_firing.len().max(1) as f64).ln().max(f64::MIN_POSITIVE);
        let width = top / bins as f64;
        let mut counts = vec![0usize; bins];
        for e in &self.entropy {
            let k = ((e / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        counts
            .into_iter()
            .enumerate()
            .map(|(k, n)| (k as f64 * width, (k + 1) as f64 * width, n))
            .collect()
    }
}

pub fn firing_diagnostics(model: &TskModel, x: &Matrix) -> Result<FiringDiagnostics> {
    Ok(FiringDiagnostics::from_profiles(&model.firing_batch(x)?))
}
