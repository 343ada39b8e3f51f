use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("matrix is singular or ill-conditioned (condition estimate {condition:e})")]
    Singular { condition: f64 },

    #[error("non-finite value in Riccati recursion at iteration {iteration}")]
    RiccatiDiverged { iteration: usize },

    #[error("non-finite {what}")]
    NonFinite { what: String },

    #[error("training diverged: non-finite {loss}")]
    Divergence { loss: &'static str },

    #[error("simulation error: {0}")]
    Simulation(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    /// Numeric failures that indicate the optimisation blew up, as opposed to
    /// bad input or I/O.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            Error::Singular { .. }
                | Error::RiccatiDiverged { .. }
                | Error::NonFinite { .. }
                | Error::Divergence { .. }
                | Error::Simulation(_)
        )
    }
}
