use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("abscissa {x} outside the lane-change interval [{x0}, {xt}]")]
    OutsideInterval { x: f64, x0: f64, xt: f64 },

    #[error("path has {len} points, need more than {needed} for windows of size {window}")]
    PathTooShort { len: usize, needed: usize, window: usize },

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },

    #[error("{0}")]
    InvalidInput(String),

    #[error("shape mismatch in `{name}`: expected {expected}, found {found}")]
    ShapeMismatch { name: String, expected: String, found: String },

    #[error("weights file: {0}")]
    WeightsFormat(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("history buffer holds {have} of {need} points")]
    HistoryNotWarm { have: usize, need: usize },

    #[error("optimal control problem: {0}")]
    Solver(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
