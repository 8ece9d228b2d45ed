use thiserror::Error;

use crate::model::BnVariant;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("label column `{0}` not found in header")]
    MissingLabelColumn(String),
    #[error("categorical column `{0}` not found in header")]
    MissingColumn(String),
    #[error("line {line}: expected {expected} fields, found {found}")]
    RaggedRow {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: column `{column}` has non-numeric value `{value}`")]
    UnparseableNumeric {
        line: u64,
        column: String,
        value: String,
    },
    #[error("table has no rows")]
    EmptyTable,
    #[error("label column has a single class; at least two are required")]
    SingleClassLabel,
    #[error("need at least {required} samples, found {found}")]
    TooFewSamples { required: usize, found: usize },

    #[error("dimension mismatch: expected {expected}, found {found} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("inconsistent model: {0}")]
    InconsistentModel(String),

    #[error("batch normalization needs at least 2 samples per batch, found {0}")]
    BatchTooSmall(usize),
    #[error("batch-norm running statistics have not been initialized")]
    UninitializedRunningStats,
    #[error("batch norm cannot be folded into consequents for variant {0:?}")]
    FoldNotApplicable(BnVariant),

    #[error("optimizer state shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("all scores are identical; ranks are degenerate")]
    DegenerateRanks,

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(what: &'static str, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            what,
            expected,
            found,
        }
    }
}
