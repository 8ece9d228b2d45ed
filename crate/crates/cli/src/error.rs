use std::fmt;

use serde::Serialize;
use serde_json::{json, Value};
use tsk_core::Error;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// An error as reported to the user: a stable `code`, a message, and
/// free-form context. Serialized to stderr as one JSON object.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CliError {
    pub code: String,
    pub message: String,
    pub context: Value,
    #[serde(skip)]
    pub exit_code: i32,
}

impl CliError {
    pub fn usage(message: impl Into<String>, context: Value) -> Self {
        Self {
            code: "usage".into(),
            message: message.into(),
            context,
            exit_code: EXIT_USAGE,
        }
    }

    pub fn data(message: impl Into<String>, context: Value) -> Self {
        Self {
            code: "data".into(),
            message: message.into(),
            context,
            exit_code: EXIT_DATA,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("error serializes")
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        let (code, exit_code, context) = match &e {
            Error::MissingLabelColumn(col) => ("missing_label_column", EXIT_USAGE, json!({"flag": "--label-col", "column": col})),
            Error::MissingColumn(col) => ("missing_column", EXIT_USAGE, json!({"flag": "--categorical-cols", "column": col})),
            Error::InvalidConfig(_) => ("invalid_config", EXIT_USAGE, json!({})),
            Error::RaggedRow { line, .. } => ("ragged_row", EXIT_DATA, json!({"line": line})),
            Error::UnparseableNumeric { line, column, .. } => {
                ("unparseable_numeric", EXIT_DATA, json!({"line": line, "column": column}))
            }
            Error::EmptyTable => ("empty_table", EXIT_DATA, json!({})),
            Error::SingleClassLabel => ("single_class_label", EXIT_DATA, json!({})),
            Error::TooFewSamples { required, found } => {
                ("too_few_samples", EXIT_DATA, json!({"required": required, "found": found}))
            }
            Error::DimensionMismatch { what, expected, found } => {
                ("dimension_mismatch", EXIT_DATA, json!({"what": what, "expected": expected, "found": found}))
            }
            Error::InconsistentModel(_) => ("inconsistent_model", EXIT_DATA, json!({})),
            Error::UninitializedRunningStats => ("uninitialized_running_stats", EXIT_DATA, json!({})),
            Error::FoldNotApplicable(v) => ("fold_not_applicable", EXIT_DATA, json!({"bn_variant": v})),
            Error::BatchTooSmall(n) => ("batch_too_small", EXIT_USAGE, json!({"batch": n})),
            Error::ShapeMismatch(_) => ("shape_mismatch", EXIT_NUMERIC, json!({})),
            Error::DegenerateRanks => ("degenerate_ranks", EXIT_NUMERIC, json!({})),
            Error::NonFinite(what) => ("non_finite", EXIT_NUMERIC, json!({"what": what})),
            Error::Io(_) => ("io", EXIT_DATA, json!({})),
            Error::Csv(_) => ("csv", EXIT_DATA, json!({})),
            Error::Json(_) => ("json", EXIT_DATA, json!({})),
        };
        Self {
            code: code.into(),
            message,
            context,
            exit_code,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e).into()
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e).into()
    }
}

pub type CliResult<T> = Result<T, CliError>;
