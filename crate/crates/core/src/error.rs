use thiserror::Error;

/// Errors raised by the recruitment model.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate moments: variance of the cumulative rate is zero")]
    DegenerateMoments,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("all counts are zero; the likelihood has no interior maximum")]
    AllZeroCounts,

    #[error("no centre is active in window [{start}, {end}]")]
    EmptyWindow { start: f64, end: f64 },

    #[error("degenerate test input: {0}")]
    DegenerateTest(String),

    #[error("search bound exceeded: no N <= {bound} meets the criterion")]
    SearchBoundExceeded { bound: u64 },

    #[error("empty centre list")]
    NoCentres,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn check_positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(domain(format!("{name} must be finite and > 0, got {value}")))
    }
}

pub(crate) fn check_probability_open(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(domain(format!("{name} must lie in (0, 1), got {value}")))
    }
}
