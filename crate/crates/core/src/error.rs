use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error(
        "staleness overflow: update from client {client_id} references round {round}, \
         oldest round kept in history is {oldest} (capacity {capacity})"
    )]
    StalenessOverflow {
        client_id: usize,
        round: u64,
        oldest: u64,
        capacity: usize,
    },

    #[error("policy violation: {0}")]
    PolicyViolation(String),

    #[error("non-finite gradient at client {client_id}, local step {step}")]
    NonFiniteGradient { client_id: usize, step: usize },

    #[error("non-finite model delta from client {client_id}")]
    NonFiniteUpdate { client_id: usize },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {what}: {message}")]
    Parse { what: String, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    /// True when the failure means the optimizer itself blew up, as opposed
    /// to a bad configuration or an I/O problem.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteGradient { .. } | Error::NonFiniteUpdate { .. }
        )
    }
}
