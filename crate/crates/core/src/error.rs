use std::path::PathBuf;

use kgsynth_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("header mismatch: expected columns {expected:?}, found {found:?}")]
    HeaderMismatch { expected: Vec<String>, found: Vec<String> },
    #[error("row {row}: cannot parse {value:?} in continuous column {column}")]
    Unparsable { row: usize, column: String, value: String },
    #[error("row {row}: missing value in column {column}")]
    MissingValue { row: usize, column: String },
    #[error("unknown category {value:?} in column {column}")]
    UnknownCategory { column: String, value: String },
    #[error("table has no rows")]
    EmptyTable,
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("rule set is invalid:\n{0}")]
    InvalidRules(String),
    #[error("table is already masked by property map {0}")]
    AlreadyMasked(String),
    #[error("value {value:?} of column {column} is not covered by property map {map}")]
    UncoveredValue { map: String, column: String, value: String },
    #[error("unknown group label {label:?} in property map {map}")]
    UnknownLabel { map: String, label: String },
    #[error("group {label:?} of property map {map} has no enumerable members")]
    UndecodableGroup { map: String, label: String },
    #[error("training rows violate rule consequents: rows {rows:?}")]
    RuleViolations { rows: Vec<usize> },
    #[error("malformed condition: {0}")]
    MalformedCondition(String),
    #[error("tensor error: {0}")]
    Tensor(#[from] TensorError),
    #[error("serialization error: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
