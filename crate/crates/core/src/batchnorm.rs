//! Batch normalization for TSK consequents: train/eval forward, running
//! statistics, and folding a trained BN layer back into plain consequent
//! parameters.
//!
//! `gamma` and `beta` are per-feature vectors. The fold is derived for that
//! parameterization: with `s_d = gamma_d / sqrt(var_d + eps)`,
//!
//! ```text
//! b'[r][d][c] = s_d * b[r][d][c]
//! b0'[r][c]   = b0[r][c] + sum_d b[r][d][c] * (beta_d - s_d * mean_d)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{BnVariant, Consequents, TskModel};

pub const DEFAULT_EPSILON: f64 = 1e-8;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

/// Learned affine parameters and running statistics of one BN block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BnState {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub epsilon: f64,
    pub momentum: f64,
    /// Number of training batches folded into the running statistics.
    #[serde(default)]
    pub batches_tracked: u64,
}

impl BnState {
    pub fn new(dims: usize) -> Self {
        Self {
            gamma: vec![1.0; dims],
            beta: vec![0.0; dims],
            running_mean: vec![0.0; dims],
            running_var: vec![1.0; dims],
            epsilon: DEFAULT_EPSILON,
            momentum: DEFAULT_MOMENTUM,
            batches_tracked: 0,
        }
    }

    pub fn dims(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_initialized(&self) -> bool {
        self.batches_tracked > 0
    }

    pub(crate) fn validate(&self, dims: usize) -> Result<()> {
        for (what, len) in [
            ("bn gamma", self.gamma.len()),
            ("bn beta", self.beta.len()),
            ("bn running_mean", self.running_mean.len()),
            ("bn running_var", self.running_var.len()),
        ] {
            if len != dims {
                return Err(Error::dims(what, dims, len));
            }
        }
        if self.epsilon <= 0.0 || self.running_var.iter().any(|v| *v < 0.0) {
            return Err(Error::InconsistentModel(
                "bn epsilon must be positive and running_var non-negative".into(),
            ));
        }
        Ok(())
    }

    /// running <- (1 - momentum) * running + momentum * batch
    pub fn update_running(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        for (r, b) in self.running_mean.iter_mut().zip(&stats.mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, b) in self.running_var.iter_mut().zip(&stats.var) {
            *r = (1.0 - m) * *r + m * b;
        }
        self.batches_tracked += 1;
    }

    /// Writes the normalized `x_hat` and the BN output `gamma * x_hat + beta`.
    /// `stats = None` selects the running statistics.
    #[inline]
    pub(crate) fn normalize_into(
        &self,
        x: &[f64],
        stats: Option<&BatchStats>,
        x_hat: &mut [f64],
        out: &mut [f64],
    ) {
        let (mean, var) = match stats {
            Some(s) => (&s.mean[..], &s.var[..]),
            None => (&self.running_mean[..], &self.running_var[..]),
        };
        for d in 0..x.len() {
            let h = (x[d] - mean[d]) / (var[d] + self.epsilon).sqrt();
            x_hat[d] = h;
            out[d] = self.gamma[d] * h + self.beta[d];
        }
    }
}

/// Per-feature population mean and variance of a mini-batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BatchStats {
    pub fn from_batch(batch: &Matrix) -> Result<Self> {
        let n = batch.rows();
        if n < 2 {
            return Err(Error::BatchTooSmall(n));
        }
        let d = batch.cols();
        let mut mean = vec![0.0; d];
        for row in batch.iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for row in batch.iter_rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n as f64);
        Ok(Self { mean, var })
    }
}

/// Normalizes a batch with its own statistics and updates the running
/// statistics of `state`. Returns `(normalized, batch_mean, batch_var)`.
pub fn bn_train_forward(batch: &Matrix, state: &mut BnState) -> Result<(Matrix, Vec<f64>, Vec<f64>)> {
    if batch.cols() != state.dims() {
        return Err(Error::dims("bn input", state.dims(), batch.cols()));
    }
    let stats = BatchStats::from_batch(batch)?;
    let mut out = Matrix::zeros(batch.rows(), batch.cols());
    let mut x_hat = vec![0.0; batch.cols()];
    for i in 0..batch.rows() {
        state.normalize_into(batch.row(i), Some(&stats), &mut x_hat, out.row_mut(i));
    }
    state.update_running(&stats);
    Ok((out, stats.mean, stats.var))
}

pub fn bn_eval_forward(x: &[f64], state: &BnState) -> Result<Vec<f64>> {
    if !state.is_initialized() {
        return Err(Error::UninitializedRunningStats);
    }
    if x.len() != state.dims() {
        return Err(Error::dims("bn input", state.dims(), x.len()));
    }
    let mut out = vec![0.0; x.len()];
    let mut x_hat = vec![0.0; x.len()];
    state.normalize_into(x, None, &mut x_hat, &mut out);
    Ok(out)
}

/// Folds one BN block into every rule of `cons`.
pub fn fold(cons: &Consequents, state: &BnState) -> Result<Consequents> {
    let mut out = cons.clone();
    for r in 0..cons.rules() {
        fold_rule(cons, state, r, &mut out)?;
    }
    Ok(out)
}

fn fold_rule(cons: &Consequents, state: &BnState, r: usize, out: &mut Consequents) -> Result<()> {
    if !state.is_initialized() {
        return Err(Error::UninitializedRunningStats);
    }
    let (d_n, c_n) = (cons.dims(), cons.classes());
    if state.dims() != d_n {
        return Err(Error::dims("bn features", d_n, state.dims()));
    }
    for c in 0..c_n {
        let mut bias = cons.bias(r, c);
        for d in 0..d_n {
            let scale = state.gamma[d] / (state.running_var[d] + state.epsilon).sqrt();
            let w = cons.weight(r, d, c);
            bias += w * (state.beta[d] - scale * state.running_mean[d]);
            *out.weight_mut(r, d, c) = scale * w;
        }
        *out.bias_mut(r, c) = bias;
    }
    Ok(())
}

/// Folds each rule's own BN block into that rule's consequents.
pub fn fold_rule_specific(cons: &Consequents, states: &[BnState]) -> Result<Consequents> {
    if states.len() != cons.rules() {
        return Err(Error::dims("rule-specific bn blocks", cons.rules(), states.len()));
    }
    let mut out = cons.clone();
    for (r, state) in states.iter().enumerate() {
        fold_rule(cons, state, r, &mut out)?;
    }
    Ok(out)
}

/// Rewrites a BN model as a plain TSK model with identical eval-mode outputs.
///
/// Global BN also transforms the antecedent inputs, which no consequent
/// rewrite can absorb, so it is rejected.
pub fn fold_model(model: &TskModel) -> Result<TskModel> {
    let folded = match model.bn_variant() {
        BnVariant::None => return Ok(model.clone()),
        BnVariant::Global => return Err(Error::FoldNotApplicable(BnVariant::Global)),
        BnVariant::Consequent => fold(&model.consequents, &model.bn_state()[0])?,
        BnVariant::RuleSpecific => fold_rule_specific(&model.consequents, model.bn_state())?,
    };
    TskModel::new(model.antecedents.clone(), folded, BnVariant::None)
}
