use rand::Rng as _;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed::Rng;

pub const MAX_ITERATIONS: usize = 100;
pub const TOLERANCE: f64 = 1e-6;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding followed by Lloyd iterations. Stops after
/// [`MAX_ITERATIONS`] or once no center moves more than [`TOLERANCE`].
/// A cluster that loses all its points is re-seeded at a random data point.
pub fn kmeans(x: &Matrix, k: usize, rng: &mut Rng) -> Result<Matrix> {
    let n = x.rows();
    if k == 0 {
        return Err(Error::InvalidConfig("k-means needs k >= 1".into()));
    }
    if n < k {
        return Err(Error::TooFewSamples { required: k, found: n });
    }
    let d = x.cols();
    let mut centers = Matrix::zeros(k, d);

    // k-means++ seeding
    centers.row_mut(0).copy_from_slice(x.row(rng.random_range(0..n)));
    let mut nearest: Vec<f64> = x.iter_rows().map(|p| sq_dist(p, centers.row(0))).collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, w) in nearest.iter().enumerate() {
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).copy_from_slice(x.row(pick));
        for (i, p) in x.iter_rows().enumerate() {
            nearest[i] = nearest[i].min(sq_dist(p, centers.row(c)));
        }
    }

    let mut assign = vec![0usize; n];
    let mut counts = vec![0usize; k];
    for _ in 0..MAX_ITERATIONS {
        for (i, p) in x.iter_rows().enumerate() {
            let mut best = (f64::INFINITY, 0);
            for c in 0..k {
                let dist = sq_dist(p, centers.row(c));
                if dist < best.0 {
                    best = (dist, c);
                }
            }
            assign[i] = best.1;
        }
        let mut sums = Matrix::zeros(k, d);
        counts.iter_mut().for_each(|c| *c = 0);
        for (i, p) in x.iter_rows().enumerate() {
            counts[assign[i]] += 1;
            for (s, v) in sums.row_mut(assign[i]).iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut shift = 0.0f64;
        for c in 0..k {
            let new: Vec<f64> = if counts[c] == 0 {
                x.row(rng.random_range(0..n)).to_vec()
            } else {
                sums.row(c).iter().map(|s| s / counts[c] as f64).collect()
            };
            shift = shift.max(sq_dist(&new, centers.row(c)).sqrt());
            centers.row_mut(c).copy_from_slice(&new);
        }
        if shift <= TOLERANCE {
            break;
        }
    }
    Ok(centers)
}
