use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid spin {0}: 2F must be a positive integer")]
    InvalidSpin(f64),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite state at step {step} (t = {time})")]
    NonFinite { step: usize, time: f64 },

    #[error("numerical Jacobian step underflowed (|b| = {norm:e})")]
    JacobianUnderflow { norm: f64 },

    #[error("all particle weights vanished at step {step}")]
    WeightsCollapsed { step: usize },

    #[error("covariance lost positive semidefiniteness at t = {time} (det = {det:e})")]
    CovarianceIndefinite { time: f64, det: f64 },

    #[error("quantum Fisher information {qfi:e} is below machine precision")]
    DegenerateFisher { qfi: f64 },

    #[error("{0}")]
    Record(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
