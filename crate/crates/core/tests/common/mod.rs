#![allow(dead_code)]

use rand::Rng as _;
use rand_distr::StandardNormal;
use tsk_core::seed::{self, Rng};
use tsk_core::{total_loss, Antecedents, BatchStats, BnVariant, Consequents, LossConfig, Matrix, Mode, TskModel};

pub const VARIANTS: [BnVariant; 4] = [
    BnVariant::None,
    BnVariant::Consequent,
    BnVariant::Global,
    BnVariant::RuleSpecific,
];

pub fn normal_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Random model with non-trivial BN parameters and initialized running
/// statistics.
pub fn random_model(r: usize, d: usize, c: usize, variant: BnVariant, rng: &mut Rng) -> TskModel {
    let centers = (0..r * d).map(|_| rng.sample(StandardNormal)).collect();
    let spreads = (0..r * d).map(|_| rng.random_range(0.5..2.0)).collect();
    let ant = Antecedents::from_parts(r, d, centers, spreads).unwrap();
    let bias = (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect();
    let weights = (0..r * d * c).map(|_| rng.random_range(-1.0..1.0)).collect();
    let cons = Consequents::from_parts(r, d, c, bias, weights).unwrap();
    let mut model = TskModel::new(ant, cons, variant).unwrap();
    for s in model.bn_state_mut() {
        for g in &mut s.gamma {
            *g = rng.random_range(0.5..1.5);
        }
        for b in &mut s.beta {
            *b = rng.random_range(-0.5..0.5);
        }
        for m in &mut s.running_mean {
            *m = rng.random_range(-1.0..1.0);
        }
        for v in &mut s.running_var {
            *v = rng.random_range(0.2..3.0);
        }
        s.batches_tracked = 1;
    }
    model
}

pub fn random_labels(n: usize, c: usize, rng: &mut Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..c)).collect()
}

pub fn stats(x: &Matrix) -> BatchStats {
    BatchStats::from_batch(x).unwrap()
}

pub fn rng(s: u64) -> Rng {
    seed::rng(s)
}

fn bn_apply(s: &tsk_core::BnState, x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|d| s.gamma[d] * (x[d] - s.running_mean[d]) / (s.running_var[d] + s.epsilon).sqrt() + s.beta[d])
        .collect()
}

/// Eval-mode class scores computed directly from the definitions: product of
/// Gaussian grades, division by their sum, firing-weighted affine outputs.
pub fn naive_scores(model: &TskModel, x: &[f64]) -> Vec<f64> {
    let (r_n, d_n, c_n) = (model.rules(), model.dims(), model.classes());
    let bn = model.bn_state();
    let ant_in: Vec<f64> = match model.bn_variant() {
        BnVariant::Global => bn_apply(&bn[0], x),
        _ => x.to_vec(),
    };
    let f: Vec<f64> = (0..r_n)
        .map(|r| {
            (0..d_n)
                .map(|d| {
                    let m = model.antecedents.center(r)[d];
                    let s = model.antecedents.spread(r)[d];
                    (-(ant_in[d] - m).powi(2) / (2.0 * s * s)).exp()
                })
                .product()
        })
        .collect();
    let total: f64 = f.iter().sum();
    let mut scores = vec![0.0; c_n];
    for r in 0..r_n {
        let z = match model.bn_variant() {
            BnVariant::None => x.to_vec(),
            BnVariant::Consequent | BnVariant::Global => bn_apply(&bn[0], x),
            BnVariant::RuleSpecific => bn_apply(&bn[r], x),
        };
        for (c, sc) in scores.iter_mut().enumerate() {
            let mut y = model.consequents.bias(r, c);
            for (d, zd) in z.iter().enumerate() {
                y += model.consequents.weight(r, d, c) * zd;
            }
            *sc += f[r] / total * y;
        }
    }
    scores
}

/// Normalized firing levels from the plain product of Gaussian grades.
pub fn naive_normalized(x: &[f64], ant: &Antecedents) -> Vec<f64> {
    let f: Vec<f64> = (0..ant.rules())
        .map(|r| {
            x.iter()
                .zip(ant.center(r))
                .zip(ant.spread(r))
                .map(|((xd, m), s)| (-(xd - m) * (xd - m) / (2.0 * s * s)).exp())
                .product()
        })
        .collect();
    let total: f64 = f.iter().sum();
    f.iter().map(|v| v / total).collect()
}

/// Central difference of the total loss with respect to every trainable
/// parameter, in `param_groups_mut` order.
pub fn numeric_gradient(x: &Matrix, y: &[usize], model: &TskModel, cfg: &LossConfig, h: f64) -> Vec<Vec<f64>> {
    let st = stats(x);
    let loss = |m: &TskModel| total_loss(x, y, m, cfg, Mode::Train(&st)).unwrap().total;
    let sizes: Vec<usize> = model.clone().param_groups_mut().iter().map(|g| g.len()).collect();
    let mut out = Vec::new();
    for (g, &len) in sizes.iter().enumerate() {
        let mut grad = vec![0.0; len];
        for (i, gi) in grad.iter_mut().enumerate() {
            let mut plus = model.clone();
            plus.param_groups_mut()[g][i] += h;
            let mut minus = model.clone();
            minus.param_groups_mut()[g][i] -= h;
            *gi = (loss(&plus) - loss(&minus)) / (2.0 * h);
        }
        out.push(grad);
    }
    out
}

/// Largest relative error over entries whose absolute error exceeds 1e-8.
pub fn worst_error(analytic: &[&[f64]], numeric: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric) {
        for (ai, ni) in a.iter().zip(n) {
            let err = (ai - ni).abs();
            let scale = ai.abs().max(ni.abs());
            if err > 1e-8 {
                worst = worst.max(err / scale);
            }
        }
    }
    worst
}
