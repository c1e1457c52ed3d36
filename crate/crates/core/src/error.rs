use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("state diverged (non-finite) at step {step}")]
    NumericDivergence { step: usize },

    #[error("closed loop is not stable: spectral radius {spectral_radius}")]
    NotStable { spectral_radius: f64 },

    #[error("stability certification failed: {0}")]
    CertificationFailed(String),

    #[error("solver failed: {reason} (residual {residual:e})")]
    SolverFailed { reason: String, residual: f64 },

    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("internal inconsistency: {0}")]
    InternalInconsistency(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn solver(reason: impl Into<String>, residual: f64) -> Self {
        Error::SolverFailed {
            reason: reason.into(),
            residual,
        }
    }

    /// Exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Parse(_) => 2,
            _ => 1,
        }
    }
}
