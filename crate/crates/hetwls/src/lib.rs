//! Weighted least squares for misspecified linear regression with
//! heteroskedastic measurement error.
//!
//! The crate provides four pieces:
//!
//! * [`estimators`] — generic weighted solves, estimation of the
//!   misspecification matrices, adaptive optimal weighting (known and grouped
//!   variances), and asymptotic-covariance estimators.
//! * [`simulation`] — data-generating processes, quadrature oracles, and a
//!   reproducible Monte Carlo engine for coverage studies.
//! * [`periodfit`] — multi-harmonic sinusoidal period estimation for
//!   irregularly sampled light curves with pluggable weighting strategies.
//! * [`stats`] / [`quadrature`] — chi-square quantiles and adaptive
//!   Gauss–Kronrod integration used throughout.

pub mod error;
pub mod estimators;
pub mod linalg;
pub mod periodfit;
pub mod quadrature;
pub mod simulation;
pub mod stats;

pub use error::{Error, Result};
