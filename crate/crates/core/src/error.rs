use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("parameter out of range: {0}")]
    Parameter(String),

    #[error("channel is not completely positive (min eigenvalue {0:.3e})")]
    NotCompletelyPositive(f64),

    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),

    #[error("mixture is not symmetric: {0}")]
    AsymmetricMixture(String),

    #[error("log argument {0:.6e} outside the asymptotic regime")]
    AsymptoticDomain(f64),

    #[error("invalid plan: {0}")]
    Plan(String),

    #[error("channel with sigma {0} has zero quantum capacity; discard it first")]
    ZeroCapacity(f64),

    #[error("every channel was discarded as unusable")]
    NoUsableChannels,
}

pub type Result<T> = std::result::Result<T, Error>;
