//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by estimation, simulation, and period-search routines.
#[derive(Debug, Error)]
pub enum Error {
    /// The (row-scaled) design matrix is rank deficient beyond tolerance.
    #[error("singular design: reciprocal condition number below {0:e}")]
    SingularDesign(f64),

    /// The gamma functional evaluated to a non-positive value on the design estimate.
    #[error("invalid gamma functional: gamma(B) = {0} is not positive")]
    InvalidGamma(f64),

    /// A group label in 1..=M has no observations.
    #[error("group {0} has no observations")]
    EmptyGroup(usize),

    /// All residuals in a group are (numerically) zero, so no weight can be formed.
    #[error("degenerate residual second moment in group {0}")]
    DegenerateGroupVariance(usize),

    /// Weight-function moments must satisfy E[w] > 0.
    #[error("invalid weight moments: E[w] = {0} is not positive")]
    InvalidMoments(f64),

    /// A covariance matrix that must be inverted is singular or not positive definite.
    #[error("singular or non positive definite covariance matrix")]
    SingularCovariance,

    /// Adaptive quadrature could not reach the requested tolerance.
    #[error("quadrature failed to reach tolerance {tol:e} (best error estimate {err:e})")]
    QuadratureFailure { tol: f64, err: f64 },

    /// Every frequency in the periodogram grid produced a singular design.
    #[error("every frequency in the grid produced a singular design")]
    AllFrequenciesSingular,

    /// Downsampling target exceeds the number of available observations.
    #[error("cannot downsample to {requested} points: only {available} available")]
    InvalidTarget { requested: usize, available: usize },

    /// Too few observations for the requested model.
    #[error("need at least {needed} observations, got {got}")]
    InsufficientObservations { needed: usize, got: usize },

    /// Mismatched vector or matrix dimensions.
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// A construction invariant was violated.
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// A required CSV column is missing.
    #[error("missing required column `{0}` in CSV header")]
    MissingColumn(String),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("could not parse `{value}` as a number")]
    ParseNumber { value: String },
}

pub type Result<T> = std::result::Result<T, Error>;
