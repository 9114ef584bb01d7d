use thiserror::Error;

/// Errors produced by the stackcast library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-finite value in item `{item}` at index {index}")]
    NonFiniteValue { item: String, index: usize },
    #[error("duplicate item id `{0}`")]
    DuplicateItemId(String),
    #[error("item `{0}` has no observations")]
    EmptySeries(String),
    #[error("no series has at least {min_length} observations")]
    EmptyAfterFilter { min_length: usize },
    #[error("invalid forecast task: {0}")]
    InvalidTask(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("series of length {len} is too short for seasonality {m}")]
    SeriesTooShort { len: usize, m: usize },
    #[error("seasonal scale is zero")]
    ZeroScale,
    #[error("every item was excluded from the dataset loss")]
    AllItemsExcluded,

    #[error("{learner}: insufficient history ({len} observations, need {needed})")]
    InsufficientHistory { learner: String, len: usize, needed: usize },
    #[error("external forecast file `{0}` not found")]
    ExternalFileMissing(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("insufficient length: T={len}, K={folds}, H={horizon} (need T - K*H >= {min_train})")]
    InsufficientLength {
        len: usize,
        folds: usize,
        horizon: usize,
        min_train: usize,
    },
    #[error("fold {fold}, model `{model}`, item `{item}`: {source}")]
    Learner {
        fold: String,
        model: String,
        item: String,
        source: Box<Error>,
    },

    #[error("non-finite loss at step {0}")]
    NonFiniteLoss(usize),
    #[error("non-finite gradient at step {0}")]
    NonFiniteGradient(usize),

    #[error("multi-layer stacking needs K >= 2 folds, got {0}")]
    InsufficientFolds(usize),

    #[error("missing score for method `{method}` on dataset `{dataset}`")]
    MissingCell { method: String, dataset: String },
    #[error("baseline `{baseline}` has zero error on dataset `{dataset}`")]
    ZeroBaseline { baseline: String, dataset: String },
    #[error("duplicate record for method `{method}`, dataset `{dataset}`, metric {metric}")]
    DuplicateRecord {
        method: String,
        dataset: String,
        metric: String,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported schema `{found}`, expected `{expected}`")]
    SchemaVersion { found: String, expected: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        let line = err.position().map(|p| p.line() as usize).unwrap_or_default();
        Error::Parse {
            line,
            message: err.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
