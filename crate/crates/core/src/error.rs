use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("stationary solve did not converge (residual {residual:e})")]
    NoConvergence { residual: f64 },

    #[error("offered load is zero; drop probability is undefined")]
    UndefinedLoad,

    #[error("effective arrival rate is zero; waiting time is undefined")]
    UndefinedWait,

    #[error("no departures ever occur; post-departure distribution is undefined")]
    DegenerateDistribution,

    #[error("{name} = {value} lies outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

/// Tolerance beyond which a probability outside [0, 1] is a hard error.
pub(crate) const PROB_SLACK: f64 = 1e-9;

/// Clamps a computed probability into [0, 1], failing when it is off by more
/// than [`PROB_SLACK`].
pub(crate) fn clamp_probability(name: &'static str, value: f64) -> Result<f64> {
    if value.is_nan() || value < -PROB_SLACK || value > 1.0 + PROB_SLACK {
        return Err(Error::OutOfRange { name, value });
    }
    Ok(value.clamp(0.0, 1.0))
}
