use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("chain has no unique stationary distribution: {0}")]
    NoUniqueStationary(String),

    #[error("conditioning on a null event: {0}")]
    NullEvent(String),

    /// Arrival plus departure probability in one slot exceeds 1.
    #[error("slot too coarse: lambda*tau + mu*tau = {total} > 1")]
    TimeScaleViolation { total: f64 },

    #[error("value iteration did not converge after {iterations} iterations (span {span:e})")]
    ConvergenceFailure { iterations: usize, span: f64 },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("cannot bracket the Lagrange multiplier: {0}")]
    BracketFailure(String),

    #[error("policy table has no entry for {0}")]
    PolicyMiss(String),

    #[error("run metrics come from different configurations: {0}")]
    ConfigMismatch(String),

    #[error("{stage}: {message}")]
    Stage { stage: &'static str, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn null_event(msg: impl Into<String>) -> Self {
        Error::NullEvent(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn stage(stage: &'static str, err: impl std::fmt::Display) -> Self {
        Error::Stage {
            stage,
            message: err.to_string(),
        }
    }
}
