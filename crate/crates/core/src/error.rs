use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Entries that should vanish in standard form are too large.
    #[error("covariance matrix is not in standard form: {}", .entries.join(", "))]
    ShapeViolation { entries: Vec<String> },

    #[error("insufficient phase coverage: {0}")]
    InsufficientCoverage(String),

    #[error("degenerate fit: {0}")]
    FitDegenerate(String),

    #[error("reconstruction inconsistency on {entry}: estimates {first:.5} and {second:.5} differ by {sigmas:.2} combined SE")]
    ReconstructionInconsistency {
        entry: String,
        first: f64,
        second: f64,
        sigmas: f64,
    },

    #[error("incomplete input: {0}")]
    IncompleteInput(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(String),

    #[error("unsupported input: {0}")]
    UnsupportedInput(String),

    #[error("unresolvable: {0}")]
    Unresolvable(String),

    #[error("{}:{line}: {message}", .path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
