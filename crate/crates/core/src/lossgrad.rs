//! Training loss (cross-entropy + L2 on consequents + uniform firing
//! regularization) and its analytic gradient.
//!
//! Notation used in the comments below, per sample `n`:
//! `L[r]` log firing, `f[r]` normalized firing, `y[r][c]` rule outputs,
//! `S[c] = sum_r f[r] y[r][c]` class scores, `u[r]` batch-mean of `f[r]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{BnVariant, Consequents, Mode, SampleBuffers, TskModel, SIGMA_SQ_MIN};

/// Target mean normalized firing level for the UR term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UrTarget {
    /// `1 / R`
    InverseRules,
    /// `1 / C`
    InverseClasses,
    Value(f64),
}

impl UrTarget {
    pub fn resolve(self, rules: usize, classes: usize) -> f64 {
        match self {
            UrTarget::InverseRules => 1.0 / rules as f64,
            UrTarget::InverseClasses => 1.0 / classes as f64,
            UrTarget::Value(v) => v,
        }
    }
}

impl std::fmt::Display for UrTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            UrTarget::InverseRules => write!(f, "1/R"),
            UrTarget::InverseClasses => write!(f, "1/C"),
            UrTarget::Value(v) => write!(f, "{v}"),
        }
    }
}

impl std::str::FromStr for UrTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "1/R" | "1/r" => Ok(UrTarget::InverseRules),
            "1/C" | "1/c" => Ok(UrTarget::InverseClasses),
            other => {
                let v: f64 = other
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad UR target `{other}`")))?;
                if !(v > 0.0 && v <= 1.0) {
                    return Err(Error::InvalidConfig(format!("UR target {v} outside (0, 1]")));
                }
                Ok(UrTarget::Value(v))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// L2 weight on consequent parameters.
    pub alpha: f64,
    /// UR weight.
    pub lambda: f64,
    pub ur_target: UrTarget,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            lambda: 0.0,
            ur_target: UrTarget::InverseRules,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub l2: f64,
    pub ur: f64,
    pub total: f64,
}

/// Gradients of the total loss, mirroring the model's parameter layout.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle {
    pub d_m: Vec<f64>,
    pub d_sigma: Vec<f64>,
    pub d_b0: Vec<f64>,
    pub d_b: Vec<f64>,
    /// One entry per BN block (empty without BN).
    pub d_gamma: Vec<Vec<f64>>,
    pub d_beta: Vec<Vec<f64>>,
}

impl GradientBundle {
    pub fn zeros_like(model: &TskModel) -> Self {
        let (r, d, c) = (model.rules(), model.dims(), model.classes());
        let blocks = model.bn_state().len();
        Self {
            d_m: vec![0.0; r * d],
            d_sigma: vec![0.0; r * d],
            d_b0: vec![0.0; r * c],
            d_b: vec![0.0; r * d * c],
            d_gamma: vec![vec![0.0; d]; blocks],
            d_beta: vec![vec![0.0; d]; blocks],
        }
    }

    /// Same order as [`TskModel::param_groups_mut`].
    pub fn groups(&self) -> Vec<&[f64]> {
        let mut g: Vec<&[f64]> = vec![&self.d_m, &self.d_sigma, &self.d_b0, &self.d_b];
        for (gamma, beta) in self.d_gamma.iter().zip(&self.d_beta) {
            g.push(gamma);
            g.push(beta);
        }
        g
    }

    pub fn l1_antecedent(&self) -> f64 {
        l1(&self.d_m) + l1(&self.d_sigma)
    }

    /// L1 norm over the consequent branch: `b0`, `b`, and the BN affine
    /// parameters that sit in front of the consequents.
    pub fn l1_consequent(&self) -> f64 {
        l1(&self.d_b0) + l1(&self.d_b) + self.l1_bn()
    }

    pub fn l1_bn(&self) -> f64 {
        self.d_gamma.iter().chain(&self.d_beta).map(|v| l1(v)).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.groups().iter().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Mean cross-entropy of `softmax(scores)` against `y` and its gradient
/// `(softmax - onehot) / N` with respect to the scores.
pub fn softmax_cross_entropy(scores: &Matrix, y: &[usize]) -> (f64, Matrix) {
    assert_eq!(scores.rows(), y.len(), "one label per score row");
    let n = scores.rows() as f64;
    let mut grad = Matrix::zeros(scores.rows(), scores.cols());
    let mut loss = 0.0;
    for (i, &label) in y.iter().enumerate() {
        loss += softmax_ce_row(scores.row(i), label, n, grad.row_mut(i));
    }
    (loss / n, grad)
}

/// Returns `-log softmax(s)[label]`; writes `(p - onehot) / n` into `grad`.
#[inline]
fn softmax_ce_row(s: &[f64], label: usize, n: f64, grad: &mut [f64]) -> f64 {
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (g, v) in grad.iter_mut().zip(s) {
        *g = (v - max).exp();
        sum += *g;
    }
    let log_z = max + sum.ln();
    for g in grad.iter_mut() {
        *g /= sum * n;
    }
    grad[label] -= 1.0 / n;
    log_z - s[label]
}

/// Sum of squares of all consequent parameters (biases and weights).
pub fn l2_penalty(cons: &Consequents) -> f64 {
    cons.bias_slice().iter().chain(cons.weight_slice()).map(|v| v * v).sum()
}

/// `sum_r (mean_n f[n][r] - tau)^2` over a batch of normalized firing rows.
pub fn ur_penalty(firing: &Matrix, tau: f64) -> f64 {
    assert!(firing.rows() > 0, "UR needs a non-empty batch");
    let n = firing.rows() as f64;
    let mut means = vec![0.0; firing.cols()];
    for row in firing.iter_rows() {
        for (m, f) in means.iter_mut().zip(row) {
            *m += f;
        }
    }
    means.iter().map(|m| (m / n - tau) * (m / n - tau)).sum()
}

fn check_batch(x: &Matrix, y: &[usize], model: &TskModel) -> Result<()> {
    if x.cols() != model.dims() {
        return Err(Error::dims("batch features", model.dims(), x.cols()));
    }
    if x.rows() != y.len() {
        return Err(Error::dims("batch labels", x.rows(), y.len()));
    }
    if x.rows() == 0 {
        return Err(Error::TooFewSamples { required: 1, found: 0 });
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= model.classes()) {
        return Err(Error::InvalidConfig(format!("label {bad} outside 0..{}", model.classes())));
    }
    Ok(())
}

/// Forward pass over the batch, caching everything the backward pass needs.
struct BatchForward {
    a: Vec<f64>,
    z: Vec<f64>,
    x_hat: Vec<f64>,
    fbar: Vec<f64>,
    y: Vec<f64>,
    d_scores: Vec<f64>,
    means: Vec<f64>,
    loss: LossBreakdown,
}

fn run_forward(x: &Matrix, y: &[usize], model: &TskModel, cfg: &LossConfig, mode: Mode<'_>) -> Result<BatchForward> {
    check_batch(x, y, model)?;
    if let Mode::Train(_) = mode {
        if model.bn_variant().is_active() && x.rows() < 2 {
            return Err(Error::BatchTooSmall(x.rows()));
        }
    }
    model.forward(x.row(0), mode)?; // validates mode/stats once

    let (n, r_n, d_n, c_n) = (x.rows(), model.rules(), model.dims(), model.classes());
    let zw = model.bn_variant().blocks(r_n).max(1) * d_n;
    let mut buf = SampleBuffers::new(model);
    let mut out = BatchForward {
        a: vec![0.0; n * d_n],
        z: vec![0.0; n * zw],
        x_hat: vec![0.0; n * zw],
        fbar: vec![0.0; n * r_n],
        y: vec![0.0; n * r_n * c_n],
        d_scores: vec![0.0; n * c_n],
        means: vec![0.0; r_n],
        loss: LossBreakdown::default(),
    };
    let mut ce = 0.0;
    for i in 0..n {
        model.forward_into(x.row(i), mode, &mut buf);
        out.a[i * d_n..(i + 1) * d_n].copy_from_slice(&buf.a);
        out.z[i * zw..(i + 1) * zw].copy_from_slice(&buf.z);
        out.x_hat[i * zw..(i + 1) * zw].copy_from_slice(&buf.x_hat);
        out.fbar[i * r_n..(i + 1) * r_n].copy_from_slice(&buf.fbar);
        out.y[i * r_n * c_n..(i + 1) * r_n * c_n].copy_from_slice(&buf.y);
        ce += softmax_ce_row(&buf.scores, y[i], n as f64, &mut out.d_scores[i * c_n..(i + 1) * c_n]);
        for (m, f) in out.means.iter_mut().zip(&buf.fbar) {
            *m += f;
        }
    }
    out.means.iter_mut().for_each(|m| *m /= n as f64);
    let tau = cfg.ur_target.resolve(r_n, c_n);
    let ce = ce / n as f64;
    let l2 = l2_penalty(&model.consequents);
    let ur: f64 = out.means.iter().map(|m| (m - tau) * (m - tau)).sum();
    out.loss = LossBreakdown {
        ce,
        l2,
        ur,
        total: ce + cfg.alpha * l2 + cfg.lambda * ur,
    };
    if !out.loss.total.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    Ok(out)
}

/// `ce + alpha * l2 + lambda * ur` on one batch.
pub fn total_loss(x: &Matrix, y: &[usize], model: &TskModel, cfg: &LossConfig, mode: Mode<'_>) -> Result<LossBreakdown> {
    Ok(run_forward(x, y, model, cfg, mode)?.loss)
}

/// Loss and exact gradients with respect to every trainable parameter.
///
/// In `Mode::Train` BN uses the supplied batch statistics. Those are
/// statistics of the raw inputs, which no trainable parameter influences,
/// so they contribute no gradient terms of their own. Nothing is mutated.
pub fn backward(
    x: &Matrix,
    y: &[usize],
    model: &TskModel,
    cfg: &LossConfig,
    mode: Mode<'_>,
) -> Result<(LossBreakdown, GradientBundle)> {
    let fw = run_forward(x, y, model, cfg, mode)?;
    let (n, r_n, d_n, c_n) = (x.rows(), model.rules(), model.dims(), model.classes());
    let variant = model.bn_variant();
    let zw = variant.blocks(r_n).max(1) * d_n;
    let tau = cfg.ur_target.resolve(r_n, c_n);
    let ant = &model.antecedents;
    let cons = &model.consequents;

    let mut g = GradientBundle::zeros_like(model);
    // dUR/df[n][r], identical for every sample.
    let ur_grad: Vec<f64> = fw
        .means
        .iter()
        .map(|m| cfg.lambda * 2.0 * (m - tau) / n as f64)
        .collect();

    let mut d_f = vec![0.0; r_n];
    let mut d_z = vec![0.0; zw];
    let mut d_a = vec![0.0; d_n];
    let mut d_y = vec![0.0; c_n];

    for i in 0..n {
        let a = &fw.a[i * d_n..(i + 1) * d_n];
        let z = &fw.z[i * zw..(i + 1) * zw];
        let fbar = &fw.fbar[i * r_n..(i + 1) * r_n];
        let ys = &fw.y[i * r_n * c_n..(i + 1) * r_n * c_n];
        let d_s = &fw.d_scores[i * c_n..(i + 1) * c_n];

        // dLoss/df[r] = sum_c dS[c] y[r][c] + UR term
        let mut weighted = 0.0;
        for r in 0..r_n {
            let yr = &ys[r * c_n..(r + 1) * c_n];
            d_f[r] = d_s.iter().zip(yr).map(|(s, v)| s * v).sum::<f64>() + ur_grad[r];
            weighted += fbar[r] * d_f[r];
        }

        d_z.iter_mut().for_each(|v| *v = 0.0);
        d_a.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..r_n {
            // Softmax Jacobian: dL[r] = f[r] (dF[r] - sum_i f[i] dF[i])
            let d_log = fbar[r] * (d_f[r] - weighted);
            let m = ant.center(r);
            let sigma = ant.spread(r);
            for d in 0..d_n {
                let diff = a[d] - m[d];
                let s2 = sigma[d] * sigma[d];
                let k = d_n * r + d;
                if s2 >= SIGMA_SQ_MIN {
                    g.d_m[k] += d_log * diff / s2;
                    g.d_sigma[k] += d_log * diff * diff / (s2 * sigma[d]);
                    d_a[d] -= d_log * diff / s2;
                } else {
                    g.d_m[k] += d_log * diff / SIGMA_SQ_MIN;
                    d_a[d] -= d_log * diff / SIGMA_SQ_MIN;
                }
            }

            for (dy, s) in d_y.iter_mut().zip(d_s) {
                *dy = s * fbar[r];
            }
            for (gb, dy) in g.d_b0[r * c_n..(r + 1) * c_n].iter_mut().zip(&d_y) {
                *gb += dy;
            }
            let blk = if variant == BnVariant::RuleSpecific { r } else { 0 };
            let zr = &z[blk * d_n..(blk + 1) * d_n];
            let w = cons.rule_weights(r);
            let gw = &mut g.d_b[r * d_n * c_n..(r + 1) * d_n * c_n];
            for d in 0..d_n {
                let wrow = &w[d * c_n..(d + 1) * c_n];
                let grow = &mut gw[d * c_n..(d + 1) * c_n];
                let mut dz = 0.0;
                for c in 0..c_n {
                    grow[c] += d_y[c] * zr[d];
                    dz += d_y[c] * wrow[c];
                }
                d_z[blk * d_n + d] += dz;
            }
        }

        // BN affine parameters. Global BN output also feeds the antecedents.
        if variant.is_active() {
            let x_hat = &fw.x_hat[i * zw..(i + 1) * zw];
            for b in 0..variant.blocks(r_n) {
                for d in 0..d_n {
                    let mut up = d_z[b * d_n + d];
                    if variant == BnVariant::Global {
                        up += d_a[d];
                    }
                    g.d_gamma[b][d] += up * x_hat[b * d_n + d];
                    g.d_beta[b][d] += up;
                }
            }
        }
    }

    let two_alpha = 2.0 * cfg.alpha;
    for (gb, b) in g.d_b0.iter_mut().zip(cons.bias_slice()) {
        *gb += two_alpha * b;
    }
    for (gw, w) in g.d_b.iter_mut().zip(cons.weight_slice()) {
        *gw += two_alpha * w;
    }
    if !g.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    Ok((fw.loss, g))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_examples() {
        let (l, g) = softmax_cross_entropy(&Matrix::from_rows(&[[0.0, 0.0]]).unwrap(), &[0]);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((g.get(0, 0) + 0.5).abs() < 1e-15 && (g.get(0, 1) - 0.5).abs() < 1e-15);

        let (l, _) = softmax_cross_entropy(&Matrix::from_rows(&[[10.0, -10.0]]).unwrap(), &[0]);
        // ln(1 + e^-20)
        // The log-sum-exp shift by 10 costs about 1e-15 absolute.
        assert!((l - 2.061_153_620_314_381_5e-9).abs() < 1e-14);

        let mut prev = f64::INFINITY;
        for scale in [0.5, 1.0, 2.0, 4.0, 8.0] {
            let (l, _) = softmax_cross_entropy(&Matrix::from_rows(&[[scale, 0.0, 0.0]]).unwrap(), &[0]);
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn l2_examples() {
        assert_eq!(l2_penalty(&Consequents::zeros(2, 3, 2)), 0.0);
        let single = Consequents::from_parts(1, 1, 1, vec![0.0], vec![3.0]).unwrap();
        assert_eq!(l2_penalty(&single), 9.0);
        let two = Consequents::from_parts(1, 1, 2, vec![1.0, 2.0], vec![2.0, 0.0]).unwrap();
        assert_eq!(l2_penalty(&two), 9.0);
    }

    #[test]
    fn ur_examples() {
        let at_tau = Matrix::from_rows(&[[0.25; 4], [0.25; 4]]).unwrap();
        assert_eq!(ur_penalty(&at_tau, 0.25), 0.0);
        let two = Matrix::from_rows(&[[0.9, 0.1], [0.5, 0.5]]).unwrap();
        assert!((ur_penalty(&two, 0.5) - 0.08).abs() < 1e-15);
        let one_hot = Matrix::from_rows(&[[1.0, 0.0, 0.0, 0.0]]).unwrap();
        assert!((ur_penalty(&one_hot, 0.25) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn ur_target_parsing() {
        assert_eq!("1/R".parse::<UrTarget>().unwrap(), UrTarget::InverseRules);
        assert_eq!("1/C".parse::<UrTarget>().unwrap(), UrTarget::InverseClasses);
        assert_eq!("0.2".parse::<UrTarget>().unwrap(), UrTarget::Value(0.2));
        assert!("1.5".parse::<UrTarget>().is_err());
        assert_eq!(UrTarget::InverseClasses.resolve(20, 4), 0.25);
    }
}
