//! Initialization, the mini-batch training loop, the subsample
//! early-stopping protocol and cross-validated selection of the UR weight.

mod kmeans;

pub use kmeans::kmeans;

use std::io::Write;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::batchnorm::BatchStats;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::lossgrad::{backward, LossConfig};
use crate::matrix::Matrix;
use crate::model::{Antecedents, BnVariant, Consequents, Mode, TskModel};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::seed::{self, stream, Rng};

/// Candidate UR weights searched by cross-validation.
pub const LAMBDA_GRID: [f64; 5] = [0.1, 1.0, 10.0, 20.0, 50.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub rules: usize,
    pub loss: LossConfig,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub max_epochs: usize,
    pub patience: usize,
    pub subsample_fraction: f64,
    pub subsample_runs: usize,
    pub cv_folds: usize,
    pub bn_variant: BnVariant,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rules: 20,
            loss: LossConfig::default(),
            batch_size: 64,
            optimizer: OptimizerConfig::default(),
            max_epochs: 2000,
            patience: 40,
            subsample_fraction: 0.2,
            subsample_runs: 5,
            cv_folds: 5,
            bn_variant: BnVariant::None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.to_owned()));
        if self.rules == 0 {
            return fail("rules must be >= 1");
        }
        if self.batch_size < 2 {
            return fail("batch_size must be >= 2");
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return fail("subsample_fraction must lie in (0, 1]");
        }
        if self.patience >= self.max_epochs {
            return fail("patience must be smaller than max_epochs");
        }
        if self.subsample_runs == 0 {
            return fail("subsample_runs must be >= 1");
        }
        if self.cv_folds < 2 {
            return fail("cv_folds must be >= 2");
        }
        if self.loss.alpha < 0.0 || self.loss.lambda < 0.0 {
            return fail("alpha and lambda must be non-negative");
        }
        Ok(())
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        let mut cfg = self.clone();
        cfg.loss.lambda = lambda;
        cfg
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub val_bca: Option<f64>,
    pub g_l1_antecedent: f64,
    pub g_l1_consequent: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
}

impl TrainTrace {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    /// CSV with header `epoch,loss,val_bca,g_l1_antecedent,g_l1_consequent`.
    /// `val_bca` is empty when no validation set was monitored.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["epoch", "loss", "val_bca", "g_l1_antecedent", "g_l1_consequent"])?;
        for e in &self.epochs {
            wtr.write_record([
                e.epoch.to_string(),
                e.loss.to_string(),
                e.val_bca.map(|v| v.to_string()).unwrap_or_default(),
                e.g_l1_antecedent.to_string(),
                e.g_l1_consequent.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Hooks into the protocol. All methods default to no-ops.
pub trait TrainObserver {
    fn subsample_run_finished(&mut self, _run: usize, _stop_epoch: usize) {}
    fn final_run_started(&mut self, _epochs: usize) {}
    fn fold_training_finished(&mut self, _lambda: f64, _fold: usize, _score: f64) {}
    fn epoch_finished(&mut self, _record: &EpochRecord) {}
}

pub struct NoopObserver;

impl TrainObserver for NoopObserver {}

/// Rule centers from k-means on `x`; spreads drawn from N(1, 0.2).
pub fn kmeans_init(x: &Matrix, rules: usize, rng: &mut Rng) -> Result<Antecedents> {
    let centers = kmeans(x, rules, rng)?;
    let normal = Normal::new(1.0, 0.2).expect("valid normal parameters");
    let spreads = (0..rules * x.cols()).map(|_| normal.sample(rng)).collect();
    Antecedents::from_parts(rules, x.cols(), centers.as_slice().to_vec(), spreads)
}

/// Zero biases, weights drawn from U(-1, 1).
pub fn init_consequents(rules: usize, dims: usize, classes: usize, rng: &mut Rng) -> Consequents {
    let weights = (0..rules * dims * classes)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Consequents::from_parts(rules, dims, classes, vec![0.0; rules * classes], weights)
        .expect("shapes agree by construction")
}

pub fn init_model(train: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<TskModel> {
    let mut rng = seed::derived_rng(seed, stream::INIT, 0);
    let ant = kmeans_init(&train.x, cfg.rules, &mut rng)?;
    let cons = init_consequents(cfg.rules, train.n_features(), train.n_classes, &mut rng);
    TskModel::new(ant, cons, cfg.bn_variant)
}

/// Mini-batch boundaries: full batches, plus the remainder when it has at
/// least two samples (a single leftover sample is dropped).
pub fn batch_ranges(n: usize, batch_size: usize) -> Vec<Range<usize>> {
    let mut out: Vec<Range<usize>> = (0..n / batch_size)
        .map(|b| b * batch_size..(b + 1) * batch_size)
        .collect();
    let rem = n % batch_size;
    if rem >= 2 {
        out.push(n - rem..n);
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpochStats {
    /// Sample-weighted mean of the batch total losses.
    pub loss: f64,
    /// Mean over steps of the antecedent-gradient L1 norm.
    pub g_l1_antecedent: f64,
    /// Mean over steps of the consequent-gradient L1 norm.
    pub g_l1_consequent: f64,
    pub steps: usize,
}

/// One pass over `data` in a freshly shuffled order.
pub fn train_epoch(
    data: &Dataset,
    model: &mut TskModel,
    optimizer: &mut dyn Optimizer,
    loss_cfg: &LossConfig,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<EpochStats> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let mut batch = Matrix::zeros(0, data.n_features());
    let mut labels = Vec::with_capacity(batch_size);
    let mut stats = EpochStats::default();
    let mut seen = 0usize;
    for range in batch_ranges(data.len(), batch_size) {
        let idx = &order[range];
        batch.gather_from(&data.x, idx);
        labels.clear();
        labels.extend(idx.iter().map(|&i| data.y[i]));

        let (loss, grads) = if model.bn_variant().is_active() {
            let bstats = BatchStats::from_batch(&batch)?;
            let out = backward(&batch, &labels, model, loss_cfg, Mode::Train(&bstats))?;
            model.update_running_stats(&bstats);
            out
        } else {
            backward(&batch, &labels, model, loss_cfg, Mode::Eval)?
        };
        optimizer.step(&mut model.param_groups_mut(), &grads.groups())?;

        stats.loss += loss.total * idx.len() as f64;
        stats.g_l1_antecedent += grads.l1_antecedent();
        stats.g_l1_consequent += grads.l1_consequent();
        stats.steps += 1;
        seen += idx.len();
    }
    if stats.steps == 0 {
        return Err(Error::TooFewSamples { required: 2, found: data.len() });
    }
    stats.loss /= seen as f64;
    stats.g_l1_antecedent /= stats.steps as f64;
    stats.g_l1_consequent /= stats.steps as f64;
    Ok(stats)
}

/// Owns a model and its optimizer; one call per epoch.
pub struct Trainer {
    pub model: TskModel,
    optimizer: Box<dyn Optimizer>,
    loss: LossConfig,
    batch_size: usize,
    rng: Rng,
}

impl Trainer {
    pub fn new(model: TskModel, cfg: &TrainConfig, seed: u64) -> Self {
        Self {
            model,
            optimizer: cfg.optimizer.build(),
            loss: cfg.loss,
            batch_size: cfg.batch_size,
            rng: seed::derived_rng(seed, stream::SHUFFLE, 0),
        }
    }

    pub fn epoch(&mut self, data: &Dataset) -> Result<EpochStats> {
        train_epoch(
            data,
            &mut self.model,
            self.optimizer.as_mut(),
            &self.loss,
            self.batch_size,
            &mut self.rng,
        )
    }
}

/// Initializes on `train` and runs exactly `epochs` epochs. When `monitor`
/// is given its eval-mode BCA is recorded every epoch.
pub fn fit_fixed_epochs(
    train: &Dataset,
    cfg: &TrainConfig,
    epochs: usize,
    seed: u64,
    monitor: Option<&Dataset>,
    observer: &mut dyn TrainObserver,
) -> Result<(TskModel, TrainTrace)> {
    cfg.validate()?;
    let mut trainer = Trainer::new(init_model(train, cfg, seed)?, cfg, seed);
    let mut trace = TrainTrace::default();
    for epoch in 1..=epochs {
        let s = trainer.epoch(train)?;
        let val_bca = monitor.map(|m| evaluate(&trainer.model, m).map(|r| r.bca)).transpose()?;
        let rec = EpochRecord {
            epoch,
            loss: s.loss,
            val_bca,
            g_l1_antecedent: s.g_l1_antecedent,
            g_l1_consequent: s.g_l1_consequent,
        };
        observer.epoch_finished(&rec);
        trace.epochs.push(rec);
    }
    Ok((trainer.model, trace))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopRun {
    /// Epoch (1-based) with the best validation BCA.
    pub best_epoch: usize,
    pub best_bca: f64,
    pub epochs_run: usize,
    pub trace: TrainTrace,
}

/// Trains on `train`, evaluating BCA on `val` after every epoch; stops once
/// `patience` consecutive epochs fail to beat the best BCA so far, or at
/// `max_epochs`.
pub fn early_stopping_run(
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
    observer: &mut dyn TrainObserver,
) -> Result<EarlyStopRun> {
    cfg.validate()?;
    let mut trainer = Trainer::new(init_model(train, cfg, seed)?, cfg, seed);
    let mut trace = TrainTrace::default();
    let (mut best_epoch, mut best_bca, mut stale) = (0usize, f64::NEG_INFINITY, 0usize);
    for epoch in 1..=cfg.max_epochs {
        let s = trainer.epoch(train)?;
        let bca = evaluate(&trainer.model, val)?.bca;
        let rec = EpochRecord {
            epoch,
            loss: s.loss,
            val_bca: Some(bca),
            g_l1_antecedent: s.g_l1_antecedent,
            g_l1_consequent: s.g_l1_consequent,
        };
        observer.epoch_finished(&rec);
        trace.epochs.push(rec);
        if bca > best_bca {
            best_bca = bca;
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(EarlyStopRun {
        best_epoch,
        best_bca,
        epochs_run: trace.len(),
        trace,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitOutcome {
    pub model: TskModel,
    /// Trace of the final full-data run.
    pub trace: TrainTrace,
    pub stop_epochs: Vec<usize>,
    pub final_epochs: usize,
    pub subsample_traces: Vec<TrainTrace>,
}

/// Rounded-half-up mean of the recorded stopping epochs, at least 1.
pub fn mean_stop_epoch(stops: &[usize]) -> usize {
    let mean = stops.iter().sum::<usize>() as f64 / stops.len().max(1) as f64;
    ((mean + 0.5).floor() as usize).max(1)
}

/// Size of the subsample used by each early-stopping run. The configured
/// fraction is raised to at least two batches, but at least a fifth of the
/// data (and one sample) is always left for validation.
pub fn subsample_size(n: usize, cfg: &TrainConfig) -> usize {
    let wanted = ((cfg.subsample_fraction * n as f64).floor() as usize).max(2 * cfg.batch_size);
    let keep_out = (n / 5).max(1);
    wanted.min(n.saturating_sub(keep_out)).max(2)
}

pub fn fit_early_stopping(train: &Dataset, cfg: &TrainConfig) -> Result<FitOutcome> {
    fit_early_stopping_observed(train, cfg, &mut NoopObserver)
}

/// Runs `subsample_runs` early-stopped trainings on random subsamples
/// (validating on the rest), then trains on all of `train` for the rounded
/// mean stopping epoch.
pub fn fit_early_stopping_observed(
    train: &Dataset,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<FitOutcome> {
    cfg.validate()?;
    let n = train.len();
    if n < 3 {
        return Err(Error::TooFewSamples { required: 3, found: n });
    }
    let n_sub = subsample_size(n, cfg);
    let mut stop_epochs = Vec::with_capacity(cfg.subsample_runs);
    let mut subsample_traces = Vec::with_capacity(cfg.subsample_runs);
    for run in 0..cfg.subsample_runs {
        let run_seed = seed::derive(cfg.seed, stream::SUBSAMPLE_RUN, run as u64);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut seed::rng(run_seed));
        let (sub, rest) = idx.split_at(n_sub);
        let outcome = early_stopping_run(&train.subset(sub), &train.subset(rest), cfg, run_seed, observer)?;
        observer.subsample_run_finished(run, outcome.best_epoch);
        stop_epochs.push(outcome.best_epoch);
        subsample_traces.push(outcome.trace);
    }
    let final_epochs = mean_stop_epoch(&stop_epochs).min(cfg.max_epochs);
    observer.final_run_started(final_epochs);
    let final_seed = seed::derive(cfg.seed, stream::FINAL_RUN, 0);
    let (model, trace) = fit_fixed_epochs(train, cfg, final_epochs, final_seed, None, observer)?;
    Ok(FitOutcome {
        model,
        trace,
        stop_epochs,
        final_epochs,
        subsample_traces,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaSelection {
    pub lambda: f64,
    /// Mean validation BCA per grid entry, in grid order.
    pub mean_scores: Vec<f64>,
}

pub fn select_lambda_cv(train: &Dataset, grid: &[f64], cfg: &TrainConfig) -> Result<LambdaSelection> {
    select_lambda_cv_observed(train, grid, cfg, &mut NoopObserver)
}

/// k-fold cross-validation of the UR weight. Each fold training is one
/// early-stopped run on the other folds, scored by its best BCA on the held
/// out fold. Ties go to the smaller lambda.
pub fn select_lambda_cv_observed(
    train: &Dataset,
    grid: &[f64],
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<LambdaSelection> {
    cfg.validate()?;
    if grid.is_empty() {
        return Err(Error::InvalidConfig("lambda grid is empty".into()));
    }
    if grid.len() == 1 {
        return Ok(LambdaSelection {
            lambda: grid[0],
            mean_scores: vec![f64::NAN],
        });
    }
    let n = train.len();
    let k = cfg.cv_folds;
    if n < 2 * k {
        return Err(Error::TooFewSamples { required: 2 * k, found: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::derived_rng(cfg.seed, stream::CV_FOLDS, 0));
    let folds: Vec<&[usize]> = (0..k).map(|f| &order[f * n / k..(f + 1) * n / k]).collect();

    let mut mean_scores = Vec::with_capacity(grid.len());
    for (li, &lambda) in grid.iter().enumerate() {
        let lcfg = cfg.with_lambda(lambda);
        let mut total = 0.0;
        for (f, held) in folds.iter().enumerate() {
            let rest: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, idx)| idx.iter().copied())
                .collect();
            let run_seed = seed::derive(cfg.seed, stream::CV_TRAINING, (li * k + f) as u64);
            let run = early_stopping_run(&train.subset(&rest), &train.subset(held), &lcfg, run_seed, observer)?;
            observer.fold_training_finished(lambda, f, run.best_bca);
            total += run.best_bca;
        }
        mean_scores.push(total / k as f64);
    }
    let mut best = 0;
    for i in 1..grid.len() {
        let better = mean_scores[i] > mean_scores[best];
        let tie_smaller = mean_scores[i] == mean_scores[best] && grid[i] < grid[best];
        if better || tie_smaller {
            best = i;
        }
    }
    Ok(LambdaSelection {
        lambda: grid[best],
        mean_scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batching_arithmetic() {
        let r = batch_ranges(130, 64);
        assert_eq!(r, vec![0..64, 64..128, 128..130]);
        assert_eq!(batch_ranges(129, 64).len(), 2);
        assert_eq!(batch_ranges(30, 64), vec![0..30]);
        assert_eq!(batch_ranges(1, 64).len(), 0);
    }

    #[test]
    fn mean_stop_rounding() {
        assert_eq!(mean_stop_epoch(&[100, 120, 80, 100, 100]), 100);
        assert_eq!(mean_stop_epoch(&[1, 2]), 2);
        assert_eq!(mean_stop_epoch(&[10, 11, 11, 10]), 11);
        assert_eq!(mean_stop_epoch(&[0, 0]), 1);
    }

    #[test]
    fn subsample_size_rules() {
        let cfg = TrainConfig::default();
        assert_eq!(subsample_size(5000, &cfg), 1000);
        assert_eq!(subsample_size(300, &cfg), 128);
        assert_eq!(subsample_size(100, &cfg), 80);
    }

    #[test]
    fn consequent_init_ranges() {
        let mut rng = seed::rng(5);
        let cons = init_consequents(50, 20, 10, &mut rng);
        assert!(cons.bias_slice().iter().all(|b| *b == 0.0));
        assert!(cons.weight_slice().iter().all(|b| b.abs() <= 1.0));
        let w = cons.weight_slice();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        assert!(mean.abs() <= 0.02, "{mean}");
    }

    #[test]
    fn spread_draws_center_on_one() {
        let x = Matrix::from_rows(&(0..10).map(|i| vec![i as f64; 1000]).collect::<Vec<_>>()).unwrap();
        let ant = kmeans_init(&x, 10, &mut seed::rng(9)).unwrap();
        let s = ant.spreads();
        assert_eq!(s.len(), 10_000);
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        assert!((mean - 1.0).abs() <= 0.01, "{mean}");
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            batch_size: 1,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            patience: 10,
            max_epochs: 10,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
