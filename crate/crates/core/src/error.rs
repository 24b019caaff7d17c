use thiserror::Error;

/// Errors raised by the compute graph.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch at node {node} ({op}): {detail}")]
    ShapeMismatch {
        node: usize,
        op: &'static str,
        detail: String,
    },
    #[error("non-finite value produced at node {node} ({op})")]
    NumericOverflow { node: usize, op: &'static str },
    #[error("invalid graph state: {0}")]
    State(String),
    #[error("backward requires a scalar root, node {node} has shape {shape:?}")]
    NonScalarRoot { node: usize, shape: Vec<usize> },
}

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("config validation failed:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::InvalidArgument(_) | Error::Parse { .. } | Error::Contract(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
