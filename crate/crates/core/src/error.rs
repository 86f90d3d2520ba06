use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("row {row}: expected {expected} values, found {found}")]
    DimensionMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("row {row}: non-finite value at column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("row {row}: duplicate id {id:?}")]
    DuplicateId { row: usize, id: String },
    #[error("line {line}: duplicate token {token:?}")]
    DuplicateToken { line: usize, token: String },
    #[error("empty input: {0}")]
    Empty(String),
    #[error("instance {index}: no in-vocabulary tokens")]
    NoKnownTokens { index: usize },
    #[error("row {row}: zero-norm vector cannot be normalized")]
    ZeroNorm { row: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("need {k} distinct points, found only {distinct}")]
    TooFewDistinct { k: usize, distinct: usize },
    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),
    #[error("invalid selection: {0}")]
    InvalidSelection(String),
    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
