use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("schema error in {path}: {message}")]
    Schema { path: PathBuf, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: expected {expected} cells, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("no readings for pollutant `{0}` in any record")]
    EmptyAggregate(String),

    #[error("insufficient data: {needed} paired observations required, {found} available")]
    InsufficientData { needed: usize, found: usize },

    #[error("vehicle `{0}` is already part of the fleet")]
    DuplicateVehicle(String),

    #[error("exhaustive search supports at most {cap} vehicles, instance has {actual}")]
    TooManyVehicles { cap: usize, actual: usize },

    #[error("weight field is missing {count} cell(s), first gap at g={g}, t={t}")]
    MissingCells { count: usize, g: usize, t: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
