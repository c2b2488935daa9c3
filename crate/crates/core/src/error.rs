use thiserror::Error;

/// Errors raised by model construction and the numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("argument out of domain: {0}")]
    Domain(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),
    #[error("environment is not supercritical (E[X] = {mean_log_mean})")]
    NotSupercritical { mean_log_mean: f64 },
    #[error("survival rate unavailable analytically and no Monte Carlo budget was given")]
    RhoUnavailable,
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

pub type Result<T> = std::result::Result<T, Error>;
