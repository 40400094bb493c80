use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    BadCell { row: usize, column: String, value: String },

    #[error("row {row}: label {label} out of range for {n_classes} classes")]
    LabelOutOfRange {
        row: usize,
        label: String,
        n_classes: usize,
    },

    #[error("label column `{0}` not found in header")]
    MissingLabelColumn(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("forget set would be empty ({0})")]
    EmptyForgetSet(String),

    #[error("class {0} has no samples in the dataset")]
    ClassAbsent(usize),

    #[error("both selections are empty; nothing to fine-tune on")]
    EmptySelection,

    #[error("retrained {metric} is {value}; FRM is undefined for a non-positive reference")]
    DegenerateReference { metric: &'static str, value: f64 },

    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("snapshot: {0}")]
    Snapshot(String),

    #[error("malformed results: {0}")]
    MalformedResults(String),

    #[error("trial {trial}, method {method}: {source}")]
    Trial {
        trial: usize,
        method: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
