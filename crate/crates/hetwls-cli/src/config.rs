//! JSON config schemas for the subcommands.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use hetwls::estimators::{GammaFunctional, WeightStrategy};
use hetwls::periodfit::PeriodWeighting;
use hetwls::simulation::{DgpConfig, VarianceEstimator};

use crate::CliError;

pub fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("cannot parse config {}: {e}", path.display())))
}

/// Resolve a config-relative path.
pub fn resolve(config_path: &Path, target: &Path) -> PathBuf {
    if target.is_absolute() {
        target.to_path_buf()
    } else {
        config_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(target)
    }
}

fn default_variance() -> VarianceEstimator {
    VarianceEstimator::Sandwich
}

fn default_estimators() -> Vec<VarianceEstimator> {
    vec![VarianceEstimator::Sandwich]
}

fn default_period_range() -> (f64, f64) {
    hetwls::periodfit::DEFAULT_PERIOD_RANGE
}

fn default_oversample() -> f64 {
    hetwls::periodfit::DEFAULT_OVERSAMPLE
}

fn default_harmonics() -> usize {
    1
}

fn default_harmonics_list() -> Vec<usize> {
    vec![1]
}

fn default_tolerance() -> f64 {
    0.01
}

fn default_base_points() -> usize {
    60
}

fn default_t_span() -> f64 {
    20.0
}

fn default_amplitude() -> f64 {
    4.0
}

fn default_periods() -> (f64, f64) {
    (0.2, 0.9)
}

fn default_sigma_atoms() -> Vec<(f64, f64)> {
    vec![(0.01, 0.05), (0.1, 0.9), (1.0, 0.05)]
}

fn default_noise_sigma() -> f64 {
    0.05
}

/// `fit` subcommand: dataset CSV path, weighting strategy, and which
/// covariance estimate to write.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub data: PathBuf,
    pub strategy: WeightStrategy,
    #[serde(default)]
    pub gamma: GammaFunctional,
    /// `nu1` or `nu2` (the oracle needs a simulation truth and is rejected).
    #[serde(default = "default_variance")]
    pub variance: VarianceEstimator,
}

/// `simulate` subcommand: the data-generating process plus the strategy and
/// estimator lists.
#[derive(Debug, Deserialize)]
pub struct SimulateConfig {
    #[serde(flatten)]
    pub dgp: DgpConfig,
    pub strategies: Vec<WeightStrategy>,
    #[serde(default = "default_estimators")]
    pub variance_estimators: Vec<VarianceEstimator>,
    #[serde(default)]
    pub gamma: GammaFunctional,
}

/// `periodogram` subcommand: one light curve, one weighting.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodogramCmdConfig {
    pub curve: PathBuf,
    #[serde(default = "default_harmonics")]
    pub harmonics: usize,
    pub weighting: PeriodWeighting,
    #[serde(default)]
    pub gamma: GammaFunctional,
    /// Period search range in days.
    #[serde(default = "default_period_range")]
    pub period_range: (f64, f64),
    #[serde(default = "default_oversample")]
    pub oversample: f64,
}

/// Shape of generated catalog curves.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CatalogShape {
    Sawtooth,
    Sinusoid,
}

/// Synthetic catalog description for `score` when no manifest is supplied.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticCatalog {
    pub curves: usize,
    #[serde(default = "default_shape")]
    pub shape: CatalogShape,
    /// Points per generated curve before downsampling.
    #[serde(default = "default_base_points")]
    pub base_points: usize,
    #[serde(default = "default_t_span")]
    pub t_span: f64,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    /// True periods are drawn uniformly from this range (days).
    #[serde(default = "default_periods")]
    pub periods: (f64, f64),
    /// `(sigma, probability)` atoms for sawtooth noise.
    #[serde(default = "default_sigma_atoms")]
    pub sigma_law: Vec<(f64, f64)>,
    /// Constant noise level for sinusoid curves.
    #[serde(default = "default_noise_sigma")]
    pub noise_sigma: f64,
}

fn default_shape() -> CatalogShape {
    CatalogShape::Sawtooth
}

/// `score` subcommand: a catalog (manifest or synthetic) swept over sample
/// sizes, harmonic counts, and weightings.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreConfig {
    #[serde(default)]
    pub catalog: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticCatalog>,
    pub sample_sizes: Vec<usize>,
    #[serde(default = "default_harmonics_list")]
    pub harmonics: Vec<usize>,
    pub weightings: Vec<PeriodWeighting>,
    /// Period search range in days.
    #[serde(default = "default_period_range")]
    pub period_range: (f64, f64),
    #[serde(default = "default_oversample")]
    pub oversample: f64,
    /// Relative error below which a period counts as recovered.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub gamma: GammaFunctional,
}
