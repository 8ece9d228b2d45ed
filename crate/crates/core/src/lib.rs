//! Trainable TSK fuzzy classifiers.
//!
//! Rules with Gaussian antecedents and affine per-class consequents are
//! trained end to end by mini-batch gradient descent. The loss combines
//! cross-entropy, an L2 penalty on consequents and a uniform-firing penalty
//! that keeps every rule in use. Batch normalization can be applied to the
//! consequent inputs and folded back into plain consequents after training.
//!
//! ```
//! use tsk_core::{synthetic, train, Preprocessor, TrainConfig};
//!
//! let raw = synthetic::blobs(600, 4, 3, 0).unwrap();
//! let (pre, _) = Preprocessor::fit_transform(&raw.x).unwrap();
//! let ds = raw.normalized(&pre).unwrap();
//! let cfg = TrainConfig { rules: 3, batch_size: 32, max_epochs: 200, patience: 10, ..TrainConfig::default() };
//! let fit = train::fit_early_stopping(&ds, &cfg).unwrap();
//! let metrics = tsk_core::evaluate(&fit.model, &ds).unwrap();
//! assert!(metrics.rca > 0.9);
//! ```

pub mod batchnorm;
pub mod data;
pub mod error;
pub mod eval;
pub mod lossgrad;
pub mod matrix;
pub mod model;
pub mod optim;
pub mod seed;
pub mod synthetic;
pub mod train;

pub use batchnorm::{fold_model, BatchStats, BnState};
pub use data::{encode, load_csv, read_csv, split_70_30, Dataset, Encoder, Preprocessor, RawTable};
pub use error::{Error, Result};
pub use eval::{dunn_fdr, evaluate, firing_diagnostics, DunnResult, FiringDiagnostics, Metrics};
pub use lossgrad::{backward, total_loss, GradientBundle, LossBreakdown, LossConfig, UrTarget};
pub use matrix::Matrix;
pub use model::{Antecedents, BnVariant, Consequents, Mode, TskModel};
pub use optim::{AdaBound, Adam, Optimizer, OptimizerConfig, SgdMomentum};
pub use train::{FitOutcome, TrainConfig, TrainObserver, TrainTrace};
