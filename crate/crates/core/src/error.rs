use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline, from tensor kernels up to the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("window error in {op}: window {window} does not fit length {length}")]
    Window {
        op: &'static str,
        window: usize,
        length: usize,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("parameter `{0}` has no gradient; run backward before stepping")]
    MissingGradient(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
