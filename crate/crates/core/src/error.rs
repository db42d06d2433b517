use thiserror::Error;

/// Errors surfaced by the simulator and the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("`{name}` = {value} is outside [{lo}, {hi}]")]
    OutOfRange {
        name: String,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("inconsistent derived rates: {0}")]
    Inconsistent(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unstable resonator (g1*g2 = {0})")]
    UnstableResonator(f64),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("value cannot be converted: {0}")]
    Unconvertible(String),
    #[error("integration failed: {0}")]
    Integration(String),
    #[error("norm violation: accounted probability {0} deviates from 1")]
    NormViolation(f64),
    #[error("insufficient data: {0}")]
    Insufficient(String),
    #[error("optimizer did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("parameter not identifiable: {0}")]
    NonIdentifiable(String),
    #[error("unphysical matrix: {0}")]
    Unphysical(String),
    #[error("{failed} of {total} resamples failed")]
    ResampleFailures { failed: usize, total: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_positive(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "{name} must be positive, got {value}"
        )))
    }
}

pub(crate) fn ensure_unit_interval(name: &str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            name: name.to_string(),
            value,
            lo: 0.0,
            hi: 1.0,
        })
    }
}
