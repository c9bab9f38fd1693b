//! Stationary regenerative models built from renewal paths.

use thiserror::Error;

pub mod index;
pub mod model;
pub mod phase;
pub mod renewal;
pub mod stable;
pub mod sweep;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegenError {
    #[error("memory parameter {0} must lie in (0, 1)")]
    InvalidBeta(f64),
    #[error("invalid renewal specification: {0}")]
    InvalidSpec(String),
    #[error("{0}")]
    InvalidArgument(String),
    #[error("regime: {0}")]
    Regime(String),
    #[error("simulation budget exhausted: {0}")]
    Budget(String),
    #[error("only {found} exceedances of threshold {threshold}")]
    TooFewExceedances { threshold: f64, found: usize },
    #[error("path of length {len} is shorter than 100 blocks of length {block}")]
    PathTooShort { len: usize, block: usize },
}
