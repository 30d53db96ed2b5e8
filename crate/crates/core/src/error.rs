//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An obstacle-density request that could not be met within the disc
    /// budget of the environment generator.
    #[error("requested obstacle ratio {requested} not reached after {discs} discs")]
    OverDense { requested: f64, discs: usize },

    /// Training or optimization produced a non-finite value.
    #[error("numerical divergence: {0}")]
    Divergence(String),

    /// Dataset generation gave up because almost every problem attempt failed.
    #[error("dataset generation aborted: {failed} of {attempted} pair attempts failed")]
    PathologicalEnvironment { failed: usize, attempted: usize },

    /// A configuration value outside its documented domain.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A checkpoint or data file that could not be decoded.
    #[error("corrupt file {path}: {reason}")]
    CorruptFile { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
