//! Rank-based multiple comparison of algorithms across datasets.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Ranks values so the largest gets rank 1; ties share their average rank.
pub fn rank_descending(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Benjamini-Hochberg step-up adjustment; output is in input order.
pub fn benjamini_hochberg(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for (pos, &k) in order.iter().enumerate().rev() {
        let candidate = p[k] * (m as f64 / (pos + 1) as f64);
        running = running.min(candidate);
        adjusted[k] = running.min(1.0);
    }
    adjusted
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DunnComparison {
    pub first: usize,
    pub second: usize,
    /// Positive when `first` has the better (smaller) mean rank.
    pub z: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DunnResult {
    /// `ranks[dataset][algorithm]`, 1 = best.
    pub ranks: Vec<Vec<f64>>,
    pub mean_ranks: Vec<f64>,
    pub comparisons: Vec<DunnComparison>,
}

/// Dunn-style pairwise comparison on within-dataset ranks with BH (FDR)
/// adjustment.
///
/// `scores` is `algorithms x datasets`, higher is better. Each dataset ranks
/// the `k` algorithms; with `n` datasets the mean-rank difference of two
/// algorithms has standard error `sqrt(k (k + 1) / (6 n))`. `pairs` selects
/// the comparisons to run and adjust over; `None` means all pairs.
pub fn dunn_fdr(scores: &Matrix, pairs: Option<&[(usize, usize)]>) -> Result<DunnResult> {
    let (k, n) = (scores.rows(), scores.cols());
    if k < 2 || n < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 algorithms and 2 datasets, got {k} x {n}"
        )));
    }
    let first = scores.get(0, 0);
    if scores.as_slice().iter().all(|v| *v == first) {
        return Err(Error::DegenerateRanks);
    }
    if !scores.is_finite() {
        return Err(Error::NonFinite("comparison scores".into()));
    }

    let ranks: Vec<Vec<f64>> = (0..n).map(|j| rank_descending(&scores.column(j))).collect();
    let mean_ranks: Vec<f64> = (0..k)
        .map(|a| ranks.iter().map(|r| r[a]).sum::<f64>() / n as f64)
        .collect();
    let se = ((k * (k + 1)) as f64 / (6.0 * n as f64)).sqrt();

    let all_pairs: Vec<(usize, usize)>;
    let pairs = match pairs {
        Some(p) => p,
        None => {
            all_pairs = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect();
            &all_pairs
        }
    };
    let mut comparisons: Vec<DunnComparison> = pairs
        .iter()
        .map(|&(i, j)| {
            if i >= k || j >= k {
                return Err(Error::InvalidConfig(format!("comparison ({i}, {j}) out of range")));
            }
            let z = (mean_ranks[j] - mean_ranks[i]) / se;
            Ok(DunnComparison {
                first: i,
                second: j,
                z,
                p_raw: erfc(z.abs() / std::f64::consts::SQRT_2),
                p_adjusted: 0.0,
            })
        })
        .collect::<Result<_>>()?;
    let raw: Vec<f64> = comparisons.iter().map(|c| c.p_raw).collect();
    for (c, adj) in comparisons.iter_mut().zip(benjamini_hochberg(&raw)) {
        c.p_adjusted = adj;
    }
    Ok(DunnResult {
        ranks,
        mean_ranks,
        comparisons,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_with_ties() {
        assert_eq!(rank_descending(&[0.5, 0.9, 0.5, 0.1]), vec![2.5, 1.0, 2.5, 4.0]);
    }

    #[test]
    fn identical_algorithms_give_p_one() {
        let row: Vec<f64> = (0..6).map(|j| 0.5 + j as f64 * 0.05).collect();
        let scores = Matrix::from_rows(&[row.clone(), row]).unwrap();
        let res = dunn_fdr(&scores, None).unwrap();
        assert_eq!(res.comparisons[0].z, 0.0);
        assert_eq!(res.comparisons[0].p_adjusted, 1.0);
    }

    #[test]
    fn degenerate_matrix_rejected() {
        let scores = Matrix::from_rows(&[[0.7; 3], [0.7; 3]]).unwrap();
        assert!(matches!(dunn_fdr(&scores, None), Err(Error::DegenerateRanks)));
    }

    #[test]
    fn bh_examples() {
        assert_eq!(benjamini_hochberg(&[0.03; 5]), vec![0.03; 5]);
        let adj = benjamini_hochberg(&[0.01, 0.04, 0.03, 0.005]);
        // sorted: 0.005*4/1=0.02, 0.01*4/2=0.02, 0.03*4/3=0.04, 0.04*4/4=0.04
        let expect = [0.02, 0.04, 0.04, 0.02];
        for (a, e) in adj.iter().zip(expect) {
            assert!((a - e).abs() < 1e-15);
        }
    }
}
