use tsk_core::seed;
use tsk_core::train::{self, EpochRecord, TrainObserver, Trainer, LAMBDA_GRID};
use tsk_core::{synthetic, BnVariant, Dataset, OptimizerConfig, Preprocessor, TrainConfig};

fn normalized_blobs(n: usize, seed: u64) -> Dataset {
    let raw = synthetic::blobs(n, 3, 3, seed).unwrap();
    let (pre, _) = Preprocessor::fit_transform(&raw.x).unwrap();
    raw.normalized(&pre).unwrap()
}

fn quick_cfg(bn: BnVariant) -> TrainConfig {
    TrainConfig {
        rules: 4,
        batch_size: 16,
        max_epochs: 60,
        patience: 5,
        bn_variant: bn,
        ..TrainConfig::default()
    }
}

#[derive(Default)]
struct Counter {
    subsample_stops: Vec<usize>,
    final_epochs: Vec<usize>,
    fold_trainings: Vec<(f64, usize)>,
    epochs: usize,
}

impl TrainObserver for Counter {
    fn subsample_run_finished(&mut self, _run: usize, stop_epoch: usize) {
        self.subsample_stops.push(stop_epoch);
    }
    fn final_run_started(&mut self, epochs: usize) {
        self.final_epochs.push(epochs);
    }
    fn fold_training_finished(&mut self, lambda: f64, fold: usize, _score: f64) {
        self.fold_trainings.push((lambda, fold));
    }
    fn epoch_finished(&mut self, _record: &EpochRecord) {
        self.epochs += 1;
    }
}

#[test]
fn remainder_batches_count_as_steps() {
    let ds = normalized_blobs(130, 0);
    let cfg = TrainConfig {
        rules: 3,
        batch_size: 64,
        ..TrainConfig::default()
    };
    let model = train::init_model(&ds, &cfg, 1).unwrap();
    let stats = Trainer::new(model, &cfg, 1).epoch(&ds).unwrap();
    assert_eq!(stats.steps, 3);
}

#[test]
fn zero_learning_rate_freezes_parameters() {
    let ds = normalized_blobs(100, 1);
    for bn in [BnVariant::None, BnVariant::Consequent, BnVariant::RuleSpecific] {
        for opt in [
            OptimizerConfig::adabound(0.0),
            OptimizerConfig::Adam {
                lr: 0.0,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            OptimizerConfig::Sgd { lr: 0.0, momentum: 0.9 },
        ] {
            let cfg = TrainConfig {
                optimizer: opt,
                ..quick_cfg(bn)
            };
            let before = train::init_model(&ds, &cfg, 2).unwrap();
            let mut trainer = Trainer::new(before.clone(), &cfg, 2);
            trainer.epoch(&ds).unwrap();
            let mut after = trainer.model.clone();
            let mut b = before.clone();
            assert_eq!(after.param_groups_mut(), b.param_groups_mut(), "{bn:?} {opt:?}");
        }
    }
}

#[test]
fn epochs_are_reproducible() {
    let ds = normalized_blobs(150, 2);
    let cfg = quick_cfg(BnVariant::Consequent);
    let run = || {
        let mut t = Trainer::new(train::init_model(&ds, &cfg, 9).unwrap(), &cfg, 9);
        for _ in 0..3 {
            t.epoch(&ds).unwrap();
        }
        t.model
    };
    assert_eq!(run(), run());
}

#[test]
fn early_stopping_is_bit_reproducible() {
    let ds = normalized_blobs(150, 3);
    let cfg = quick_cfg(BnVariant::Consequent).with_seed(11);
    let a = train::fit_early_stopping(&ds, &cfg).unwrap();
    let b = train::fit_early_stopping(&ds, &cfg).unwrap();
    assert_eq!(a.model.to_json().unwrap(), b.model.to_json().unwrap());
    assert_eq!(a.trace, b.trace);
    assert_ne!(
        train::fit_early_stopping(&ds, &cfg.with_seed(12)).unwrap().model,
        a.model
    );
}

#[test]
fn protocol_counts() {
    let ds = normalized_blobs(200, 4);
    let cfg = quick_cfg(BnVariant::None);
    let mut obs = Counter::default();
    let fit = train::fit_early_stopping_observed(&ds, &cfg, &mut obs).unwrap();
    assert_eq!(obs.subsample_stops.len(), 5);
    assert_eq!(obs.subsample_stops, fit.stop_epochs);
    let mean = fit.stop_epochs.iter().sum::<usize>() as f64 / 5.0;
    assert_eq!(obs.final_epochs, vec![(mean + 0.5).floor() as usize]);
    assert_eq!(fit.trace.len(), fit.final_epochs);
    let sub_epochs: usize = fit.subsample_traces.iter().map(|t| t.len()).sum();
    assert_eq!(obs.epochs, sub_epochs + fit.final_epochs);
    for t in &fit.subsample_traces {
        assert!(t.len() <= cfg.max_epochs);
    }

    let mut obs = Counter::default();
    let sel = train::select_lambda_cv_observed(&ds, &LAMBDA_GRID, &cfg, &mut obs).unwrap();
    assert_eq!(obs.fold_trainings.len(), 25);
    assert!(LAMBDA_GRID.contains(&sel.lambda));
    assert_eq!(sel.mean_scores.len(), 5);
}

#[test]
fn single_lambda_grid_trains_nothing() {
    let ds = normalized_blobs(60, 5);
    let mut obs = Counter::default();
    let sel = train::select_lambda_cv_observed(&ds, &[7.0], &quick_cfg(BnVariant::None), &mut obs).unwrap();
    assert_eq!(sel.lambda, 7.0);
    assert!(obs.fold_trainings.is_empty());
}

#[test]
fn patience_stops_after_consecutive_non_improvements() {
    let ds = normalized_blobs(200, 6);
    let (sub, rest): (Vec<usize>, Vec<usize>) = (0..200).partition(|i| i % 5 == 0);
    let cfg = quick_cfg(BnVariant::None);
    let run = train::early_stopping_run(&ds.subset(&sub), &ds.subset(&rest), &cfg, 3, &mut train::NoopObserver).unwrap();
    let bca: Vec<f64> = run.trace.epochs.iter().map(|e| e.val_bca.unwrap()).collect();
    let best = bca.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let first_best = bca.iter().position(|b| *b == best).unwrap() + 1;
    assert_eq!(run.best_epoch, first_best);
    if run.epochs_run < cfg.max_epochs {
        assert_eq!(run.epochs_run, run.best_epoch + cfg.patience);
    }
}

#[test]
fn training_descends_on_separable_blobs() {
    let ds = normalized_blobs(300, 7);
    for bn in [BnVariant::None, BnVariant::Consequent, BnVariant::Global, BnVariant::RuleSpecific] {
        let cfg = quick_cfg(bn).with_lambda(1.0);
        let (model, trace) = train::fit_fixed_epochs(&ds, &cfg, 30, 5, Some(&ds), &mut train::NoopObserver).unwrap();
        let losses = trace.losses();
        assert!(losses[29] < losses[0], "{bn:?}: {losses:?}");
        assert!(tsk_core::evaluate(&model, &ds).unwrap().rca >= 0.95, "{bn:?}");
    }
}

#[test]
fn trace_csv_has_one_row_per_epoch() {
    let ds = normalized_blobs(90, 8);
    let cfg = quick_cfg(BnVariant::None);
    let (_, trace) = train::fit_fixed_epochs(&ds, &cfg, 4, 1, None, &mut train::NoopObserver).unwrap();
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch,loss,val_bca,g_l1_antecedent,g_l1_consequent");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("1,"));
}

#[test]
fn kmeans_spreads_have_unit_mean() {
    let x = tsk_core::Matrix::from_rows(&(0..200).map(|i| [i as f64, (i * 7 % 13) as f64]).collect::<Vec<_>>()).unwrap();
    let mut rng = seed::rng(4);
    let mut spreads = Vec::new();
    while spreads.len() < 10_000 {
        spreads.extend_from_slice(train::kmeans_init(&x, 50, &mut rng).unwrap().spreads());
    }
    let mean = spreads.iter().sum::<f64>() / spreads.len() as f64;
    assert!((mean - 1.0).abs() <= 0.01, "{mean}");
}
