use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not positive definite (pivot {pivot} at row {row}); try raising the jitter")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("missing class {0} in support set")]
    MissingClass(usize),

    #[error("class {class} has {available} examples, episode needs {needed}")]
    InsufficientExamples {
        class: usize,
        available: usize,
        needed: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {format} data at byte {offset}: {message}")]
    Format {
        format: &'static str,
        offset: usize,
        message: String,
    },

    #[error("config error in [{section}] key `{key}`: {message}")]
    Config {
        section: String,
        key: String,
        message: String,
    },

    #[error("training diverged at step {step}: {message}")]
    Diverged { step: usize, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }
}
