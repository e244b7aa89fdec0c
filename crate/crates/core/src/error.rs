use thiserror::Error;

use crate::oracle::OracleKind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("budget exhausted for {0} oracle")]
    BudgetExceeded(OracleKind),

    #[error("oracle unavailable: {0}")]
    OracleUnavailable(String),

    #[error("oracle protocol error: {0}")]
    OracleProtocol(String),

    #[error("malformed sample: {0}")]
    MalformedSample(String),

    /// Returned when a state-machine step is requested on a node that has
    /// already moved past it.
    #[error("no-op: {0}")]
    NoOp(String),

    #[error("config digest mismatch: tree has {tree}, config has {config}")]
    ConfigMismatch { tree: String, config: String },

    #[error("parse error at `{field}`: {message}")]
    Parse { field: String, message: String },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("universe construction failed: {0}")]
    UniverseConstructionFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn invariant(msg: impl Into<String>) -> Self {
        Error::Invariant(msg.into())
    }

    pub fn is_budget(&self) -> bool {
        matches!(self, Error::BudgetExceeded(_))
    }
}

impl<E: std::fmt::Display> From<serde_path_to_error::Error<E>> for Error {
    fn from(err: serde_path_to_error::Error<E>) -> Self {
        let field = err.path().to_string();
        Error::Parse {
            field: if field.is_empty() { ".".into() } else { field },
            message: err.inner().to_string(),
        }
    }
}
