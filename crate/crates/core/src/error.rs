use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes that do not line up for the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A class label, permutation index or similar lies outside its range.
    #[error("index error: {0}")]
    Index(String),

    /// A configuration or argument value is outside its admissible domain.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// A precondition on input data does not hold (e.g. unnormalized rows).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Backward was already run on this graph.
    #[error("graph error: {0}")]
    Graph(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, step {step}: term `{term}` is {value}")]
    Divergence {
        epoch: usize,
        step: usize,
        term: &'static str,
        value: f64,
    },

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
