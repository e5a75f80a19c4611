use alloc::string::String;

/// Errors produced by the analysis and simulation routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("time {t} lies outside the switching schedule")]
    OutOfRange { t: f64 },
    #[error("infeasible attack schedule: {0}")]
    InfeasibleSchedule(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
