//! Experiment harness around `tsk-core`: single training runs, evaluation,
//! the repeated-split benchmark with rank statistics, batch-size sweeps,
//! BN folding and firing diagnostics.

pub mod commands;
pub mod error;
pub mod experiment;
pub mod report;

pub use commands::{run, Cli};
pub use error::{CliError, CliResult};
pub use experiment::{DatasetSource, ExperimentSpec, Variant};
pub use report::{run_benchmark, run_sweep, write_report, write_sweep, ExperimentReport};
