use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("rank error: expected rank {expected}, got {actual}")]
    Rank { expected: usize, actual: usize },

    #[error("numerical failure after {iterations} iterations: {what}")]
    Numerical { what: String, iterations: usize },

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("unsupported capability: {0}")]
    Capability(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("dataset error at line {line}: {msg}")]
    Dataset { line: usize, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
