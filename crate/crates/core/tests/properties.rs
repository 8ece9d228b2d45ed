mod common;

use common::*;
use proptest::prelude::*;
use tsk_core::batchnorm::bn_train_forward;
use tsk_core::data::split_indices;
use tsk_core::eval::{benjamini_hochberg, firing_entropy, rank_descending, FiringDiagnostics};
use tsk_core::{BnState, Matrix, Preprocessor};

fn column_moments(x: &Matrix, j: usize) -> (f64, f64) {
    let col = x.column(j);
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

proptest! {
    #[test]
    fn preprocessor_standardizes_training_columns(
        seed in any::<u64>(),
        rows in 2usize..60,
        cols in 1usize..6,
        scale in 1e-3f64..1e3,
        offset in -1e3f64..1e3,
    ) {
        let mut rng = rng(seed);
        let mut x = normal_matrix(rows, cols, &mut rng);
        for i in 0..rows {
            for v in x.row_mut(i) {
                *v = offset + scale * *v;
            }
        }
        let (pre, z) = Preprocessor::fit_transform(&x).unwrap();
        for j in 0..cols {
            if pre.constant_columns.contains(&j) {
                continue;
            }
            let (m, s) = column_moments(&z, j);
            prop_assert!(m.abs() <= 1e-9, "mean {}", m);
            prop_assert!((s - 1.0).abs() <= 1e-9, "std {}", s);
        }
        prop_assert_eq!(pre.apply(&x).unwrap(), z);
    }

    #[test]
    fn split_is_a_partition(n in 10usize..400, seed in any::<u64>()) {
        let (train, test) = split_indices(n, seed).unwrap();
        prop_assert_eq!(train.len(), n * 7 / 10);
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(split_indices(n, seed).unwrap(), (train, test));
    }

    #[test]
    fn bh_adjustment_is_monotone_and_bounded(p in prop::collection::vec(0.0f64..=1.0, 1..40)) {
        let adj = benjamini_hochberg(&p);
        let mut order: Vec<usize> = (0..p.len()).collect();
        order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
        for w in order.windows(2) {
            prop_assert!(adj[w[0]] <= adj[w[1]]);
        }
        for (a, raw) in adj.iter().zip(&p) {
            prop_assert!(*a >= *raw && *a <= 1.0);
        }
    }

    #[test]
    fn entropy_lies_between_zero_and_log_r(w in prop::collection::vec(0.0f64..1.0, 1..20)) {
        let total: f64 = w.iter().sum();
        prop_assume!(total > 0.0);
        let f: Vec<f64> = w.iter().map(|v| v / total).collect();
        let e = firing_entropy(&f);
        prop_assert!(e >= -1e-12 && e <= (f.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn ranks_sum_to_triangular_number(v in prop::collection::vec(0.0f64..1.0, 1..15)) {
        let k = v.len() as f64;
        let total: f64 = rank_descending(&v).iter().sum();
        prop_assert!((total - k * (k + 1.0) / 2.0).abs() <= 1e-9);
    }
}

fn binomial_pmf(n: u64, k: u64, p: f64) -> f64 {
    let ln_choose: f64 = (1..=k).map(|i| ((n - k + i) as f64 / i as f64).ln()).sum();
    (ln_choose + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp()
}

#[test]
fn test_frequency_over_thirty_splits() {
    // Each sample's test count over 30 seeds is Binomial(30, 254/846). Samples
    // outside [0.1, 0.5] happen by chance; their number must stay in line
    // with the binomial tail.
    let (n, seeds) = (846usize, 30u64);
    let mut hits = vec![0u64; n];
    for seed in 0..seeds {
        for i in split_indices(n, seed).unwrap().1 {
            hits[i] += 1;
        }
    }
    let p = 254.0 / 846.0;
    let tail: f64 = (0..=seeds)
        .filter(|k| !(3..=15).contains(k))
        .map(|k| binomial_pmf(seeds, k, p))
        .sum();
    let expected = tail * n as f64;
    let outside = hits.iter().filter(|h| !(3..=15).contains(*h)).count() as f64;
    assert!(outside <= expected + 4.0 * expected.sqrt() + 1.0, "{outside} vs {expected}");
    let mean = hits.iter().sum::<u64>() as f64 / (n as f64 * seeds as f64);
    assert!((mean - p).abs() <= 1e-12);
}

#[test]
fn every_sample_lands_in_test_on_small_sets() {
    let n = 10;
    let mut hits = vec![0usize; n];
    for seed in 0..30 {
        for i in split_indices(n, seed).unwrap().1 {
            hits[i] += 1;
        }
    }
    assert!(hits.iter().all(|h| *h > 0));
    assert_eq!(hits.iter().sum::<usize>(), 90);
}

#[test]
fn running_statistics_converge_to_the_data_moments() {
    let mut rng = rng(8);
    let x = normal_matrix(64, 3, &mut rng);
    let mean: Vec<f64> = (0..3).map(|j| column_moments(&x, j).0).collect();
    let var: Vec<f64> = (0..3).map(|j| column_moments(&x, j).1.powi(2)).collect();
    let mut state = BnState::new(3);
    for _ in 0..300 {
        bn_train_forward(&x, &mut state).unwrap();
    }
    for j in 0..3 {
        assert!((state.running_mean[j] - mean[j]).abs() <= 1e-9);
        assert!((state.running_var[j] - var[j]).abs() <= 1e-9);
    }
    assert_eq!(state.batches_tracked, 300);
}

#[test]
fn bn_output_is_standardized_per_batch() {
    let mut rng = rng(9);
    let x = normal_matrix(32, 4, &mut rng);
    let (z, _, _) = bn_train_forward(&x, &mut BnState::new(4)).unwrap();
    for j in 0..4 {
        let (m, s) = column_moments(&z, j);
        assert!(m.abs() <= 1e-12);
        assert!((s - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn uniform_profiles_have_zero_rule_variance() {
    let f = Matrix::from_rows(&[[0.25; 4], [0.25; 4]]).unwrap();
    let d = FiringDiagnostics::from_profiles(&f);
    assert_eq!(d.rule_variance(), 0.0);
    assert!((d.mean_entropy() - 4f64.ln()).abs() <= 1e-15);
}
