//! Gaussian-mixture dataset generators used by the tests, benches and the
//! offline benchmark suite.
//!
//! Each class owns a few clusters in a low-dimensional latent space. Samples
//! are mapped to the observed feature space by a random linear projection,
//! then given per-feature offsets and scales and isotropic noise, so raw
//! features are correlated and on different scales.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub samples: usize,
    pub features: usize,
    pub classes: usize,
    /// Relative class frequencies; empty means balanced.
    pub class_weights: Vec<f64>,
    pub clusters_per_class: usize,
    /// Latent dimension; 0 uses the feature dimension and skips projection.
    pub latent_dims: usize,
    /// Standard deviation of cluster centers around the origin, in units of
    /// the within-cluster spread.
    pub separation: f64,
    /// Minimum latent distance between any two cluster centers; centers are
    /// redrawn until it holds. 0 disables the check.
    pub min_center_distance: f64,
    /// Observation noise added after projection.
    pub noise: f64,
}

impl MixtureSpec {
    fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.features == 0 || self.clusters_per_class == 0 {
            return Err(Error::InvalidConfig(
                "mixture needs >= 2 classes, >= 1 feature and >= 1 cluster per class".into(),
            ));
        }
        if self.samples < self.classes {
            return Err(Error::TooFewSamples {
                required: self.classes,
                found: self.samples,
            });
        }
        if !self.class_weights.is_empty()
            && (self.class_weights.len() != self.classes || self.class_weights.iter().any(|w| !w.is_finite() || *w <= 0.0))
        {
            return Err(Error::InvalidConfig("class_weights must be positive, one per class".into()));
        }
        Ok(())
    }

    /// Per-class sample counts: proportional to the weights by largest
    /// remainder, with at least one sample per class.
    pub fn class_sizes(&self) -> Vec<usize> {
        let w: Vec<f64> = if self.class_weights.is_empty() {
            vec![1.0; self.classes]
        } else {
            self.class_weights.clone()
        };
        let spare = self.samples - self.classes;
        let total: f64 = w.iter().sum();
        let exact: Vec<f64> = w.iter().map(|wi| wi / total * spare as f64).collect();
        let mut sizes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut left = spare - sizes.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..self.classes).collect();
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
        for &c in order.iter().cycle() {
            if left == 0 {
                break;
            }
            sizes[c] += 1;
            left -= 1;
        }
        sizes.iter().map(|s| s + 1).collect()
    }

    /// Draws the dataset. Rows are shuffled so classes are interleaved.
    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        self.validate()?;
        let mut rng = seed::rng(seed);
        let latent = if self.latent_dims == 0 { self.features } else { self.latent_dims };
        let k = self.classes * self.clusters_per_class;

        let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
        let mut attempts = 0usize;
        while centers.len() < k {
            let c: Vec<f64> = (0..latent)
                .map(|_| self.separation * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let far = centers.iter().all(|o| {
                o.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= self.min_center_distance
            });
            attempts += 1;
            if far {
                centers.push(c);
            } else if attempts > 10_000 {
                return Err(Error::InvalidConfig("cannot place cluster centers that far apart".into()));
            }
        }
        let projection: Option<Vec<f64>> = (self.latent_dims != 0).then(|| {
            let scale = 1.0 / (latent as f64).sqrt();
            (0..self.features * latent)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect()
        });
        let offsets: Vec<f64> = (0..self.features).map(|_| rng.random_range(-50.0..50.0)).collect();
        let scales: Vec<f64> = (0..self.features).map(|_| rng.random_range(0.5..20.0)).collect();
        let noise = Normal::new(0.0, self.noise.max(0.0)).map_err(|e| Error::InvalidConfig(e.to_string()))?;

        let mut rows = Vec::with_capacity(self.samples);
        let mut labels = Vec::with_capacity(self.samples);
        let mut z = vec![0.0; latent];
        for (class, &count) in self.class_sizes().iter().enumerate() {
            for i in 0..count {
                let cluster = class * self.clusters_per_class + i % self.clusters_per_class;
                for (zj, cj) in z.iter_mut().zip(&centers[cluster]) {
                    *zj = cj + rng.sample::<f64, _>(StandardNormal);
                }
                let row: Vec<f64> = (0..self.features)
                    .map(|d| {
                        let v = match &projection {
                            Some(p) => p[d * latent..(d + 1) * latent].iter().zip(&z).map(|(a, b)| a * b).sum(),
                            None => z[d],
                        };
                        offsets[d] + scales[d] * (v + noise.sample(&mut rng))
                    })
                    .collect();
                rows.push(row);
                labels.push(class);
            }
        }

        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.shuffle(&mut rng);
        let x = Matrix::from_rows(&order.iter().map(|&i| &rows[i][..]).collect::<Vec<_>>())?;
        let y = order.iter().map(|&i| labels[i]).collect();
        Dataset::unnamed(x, y, self.classes)
    }
}

/// Well-separated isotropic blobs, one per class.
pub fn blobs(samples: usize, features: usize, classes: usize, seed: u64) -> Result<Dataset> {
    MixtureSpec {
        samples,
        features,
        classes,
        class_weights: Vec::new(),
        clusters_per_class: 1,
        latent_dims: 0,
        separation: 6.0,
        min_center_distance: 8.0,
        noise: 0.0,
    }
    .generate(seed)
}

/// 846 x 18, 4 classes, moderately overlapping.
pub fn vehicle_like(seed: u64) -> Result<Dataset> {
    MixtureSpec {
        samples: 846,
        features: 18,
        classes: 4,
        class_weights: vec![212.0, 217.0, 218.0, 199.0],
        clusters_per_class: 2,
        latent_dims: 6,
        separation: 1.6,
        min_center_distance: 0.0,
        noise: 0.3,
    }
    .generate(seed)
}

/// 6435 x 36, 6 imbalanced classes generated from a 4-dimensional latent
/// space.
pub fn satellite_like(seed: u64) -> Result<Dataset> {
    MixtureSpec {
        samples: 6435,
        features: 36,
        classes: 6,
        class_weights: vec![1533.0, 703.0, 1358.0, 626.0, 707.0, 1508.0],
        clusters_per_class: 2,
        latent_dims: 4,
        separation: 2.0,
        min_center_distance: 0.0,
        noise: 0.3,
    }
    .generate(seed)
}

/// 1055 x 41, 2 classes (about 1:2), from a 6-dimensional latent space.
pub fn biodeg_like(seed: u64) -> Result<Dataset> {
    MixtureSpec {
        samples: 1055,
        features: 41,
        classes: 2,
        class_weights: vec![356.0, 699.0],
        clusters_per_class: 3,
        latent_dims: 6,
        separation: 1.4,
        min_center_distance: 0.0,
        noise: 0.3,
    }
    .generate(seed)
}

/// 1151 x 19, 2 nearly balanced, strongly overlapping classes.
pub fn drd_like(seed: u64) -> Result<Dataset> {
    MixtureSpec {
        samples: 1151,
        features: 19,
        classes: 2,
        class_weights: vec![540.0, 611.0],
        clusters_per_class: 3,
        latent_dims: 5,
        separation: 1.2,
        min_center_distance: 0.0,
        noise: 0.4,
    }
    .generate(seed)
}

/// Names accepted by [`by_name`], besides `blobs`.
pub const NAMES: [&str; 4] = ["vehicle", "biodeg", "drd", "satellite"];

/// Stream tag for the per-member seeds of [`suite`].
pub const SUITE_STREAM: u64 = 0x5EED;

/// Members of the benchmark suite, in order.
pub const SUITE: [&str; 3] = ["vehicle", "biodeg", "drd"];

/// A generator by name: `blobs` (600 x 4, 3 classes) or one of [`NAMES`].
pub fn by_name(name: &str, seed: u64) -> Result<Dataset> {
    match name {
        "blobs" => blobs(600, 4, 3, seed),
        "vehicle" => vehicle_like(seed),
        "biodeg" => biodeg_like(seed),
        "drd" => drd_like(seed),
        "satellite" => satellite_like(seed),
        other => Err(Error::InvalidConfig(format!("unknown synthetic dataset `{other}`"))),
    }
}

/// The benchmark suite: mixtures shaped like small tabular benchmarks, each
/// drawn with its own seed derived from `seed`.
pub fn suite(seed: u64) -> Result<Vec<(String, Dataset)>> {
    SUITE
        .iter()
        .enumerate()
        .map(|(i, name)| Ok((name.to_string(), by_name(name, seed::derive(seed, SUITE_STREAM, i as u64))?)))
        .collect()
}

/// Writes `ds` as CSV with a trailing `label` column holding `class_NN`
/// names, which sort back into the same class order on load.
pub fn write_csv<W: Write>(ds: &Dataset, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = ds.feature_names.clone();
    header.push("label".into());
    wtr.write_record(&header)?;
    for (row, &y) in ds.x.iter_rows().zip(&ds.y) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(format!("class_{y:02}"));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}
