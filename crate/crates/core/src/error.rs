use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("update probability p must satisfy 0 < p <= 1, got {0}")]
    InvalidProbability(f64),
    #[error("sampling cost c must be finite and >= 0, got {0}")]
    InvalidCost(f64),
    #[error("invalid age state (x={x}, y={y}): need x >= 0, y >= 1 and x <= y")]
    InvalidState { x: u64, y: u64 },
    #[error("threshold must be >= {min}, got {got}")]
    InvalidThreshold { got: u64, min: u64 },
    #[error("state (x={x}, y={y}) is outside the feasible set of threshold {y0}")]
    Infeasible { x: u64, y: u64, y0: u64 },
    #[error("relative cost unavailable at (x={x}, y={y})")]
    MissingValue { x: u64, y: u64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("discount factor must lie in (0, 1), got {0}")]
    InvalidDiscount(f64),
    #[error("tolerance must be finite and > 0, got {0}")]
    InvalidTolerance(f64),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
}

pub type Result<T> = std::result::Result<T, Error>;
