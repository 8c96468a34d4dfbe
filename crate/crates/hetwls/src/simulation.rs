//! Data-generating processes, quadrature oracles, and a reproducible Monte
//! Carlo engine for coverage studies of the weighted estimators.
//!
//! Replicates are independent work units seeded from counter-based RNG
//! substreams `(seed, replicate_index)`, so serial and parallel runs produce
//! bit-identical reports.

use std::io::Write;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{self, GammaFunctional, RegressionData, WeightMoments, WeightStrategy};
use crate::linalg::symmetrized;
use crate::quadrature;
use crate::stats;

/// Confidence level used for all coverage evaluation.
pub const CONFIDENCE_LEVEL: f64 = 0.95;

/// Quadrature tolerance for oracle quantities; far below Monte Carlo error.
pub const ORACLE_TOLERANCE: f64 = 1e-10;

/// True regression function of the data-generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionFn {
    /// f(x) = x^2 (a quadratic fit by a line, the canonical misspecified case).
    Quadratic,
    /// f(x) = c0 + c1 x, correctly specified by the linear model.
    Linear(Vec<f64>),
    /// Piecewise-linear interpolation of `(x, f(x))` knots on [0, 1].
    Custom(Vec<(f64, f64)>),
}

impl RegressionFn {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Self::Quadratic => x * x,
            Self::Linear(c) => c[0] + c[1] * x,
            Self::Custom(table) => {
                let first = table.first().expect("validated non-empty");
                let last = table.last().expect("validated non-empty");
                if x <= first.0 {
                    return first.1;
                }
                if x >= last.0 {
                    return last.1;
                }
                let k = table.partition_point(|&(t, _)| t <= x);
                let (x0, f0) = table[k - 1];
                let (x1, f1) = table[k];
                f0 + (f1 - f0) * (x - x0) / (x1 - x0)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Self::Quadratic => Ok(()),
            Self::Linear(c) => {
                if c.len() != 2 {
                    return Err(Error::InvalidData(
                        "linear regression function needs [intercept, slope]".into(),
                    ));
                }
                Ok(())
            }
            Self::Custom(table) => {
                if table.len() < 2 {
                    return Err(Error::InvalidData(
                        "custom table needs at least 2 knots".into(),
                    ));
                }
                if table.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err(Error::InvalidData(
                        "custom table knots must increase".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Interior points where the integrands may lose smoothness.
    fn knots(&self) -> Vec<f64> {
        match self {
            Self::Custom(table) => table.iter().map(|&(x, _)| x).collect(),
            _ => Vec::new(),
        }
    }
}

/// Law of the per-observation error standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaLaw {
    /// sigma drawn independently of x from `(value, probability)` atoms.
    Discrete(Vec<(f64, f64)>),
    /// sigma a step function of x: `values[k]` between consecutive thresholds,
    /// each threshold belonging to the interval on its right. `values` has one
    /// more entry than `thresholds`.
    StepOfX {
        thresholds: Vec<f64>,
        values: Vec<f64>,
    },
}

impl SigmaLaw {
    fn validate(&self) -> Result<()> {
        match self {
            Self::Discrete(atoms) => {
                if atoms.is_empty() {
                    return Err(Error::InvalidData("discrete sigma law has no atoms".into()));
                }
                if atoms.iter().any(|&(s, p)| s <= 0.0 || p < 0.0) {
                    return Err(Error::InvalidData(
                        "sigma values must be positive and probabilities nonnegative".into(),
                    ));
                }
                let total: f64 = atoms.iter().map(|&(_, p)| p).sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidData(format!(
                        "atom probabilities sum to {total}, expected 1"
                    )));
                }
                Ok(())
            }
            Self::StepOfX { thresholds, values } => {
                if values.len() != thresholds.len() + 1 {
                    return Err(Error::InvalidData(
                        "step law needs one more value than thresholds".into(),
                    ));
                }
                if thresholds.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidData(
                        "thresholds must strictly increase".into(),
                    ));
                }
                if values.iter().any(|&v| v <= 0.0) {
                    return Err(Error::InvalidData("sigma values must be positive".into()));
                }
                Ok(())
            }
        }
    }

    /// Evaluate the step law at x (dependent case only).
    pub fn sigma_at(&self, x: f64) -> Option<f64> {
        match self {
            Self::Discrete(_) => None,
            Self::StepOfX { thresholds, values } => {
                let k = thresholds.partition_point(|&t| t <= x);
                Some(values[k])
            }
        }
    }

    fn is_dependent(&self) -> bool {
        matches!(self, Self::StepOfX { .. })
    }
}

/// Configuration of a Monte Carlo study. Covariates are drawn uniformly on
/// [0, 1], noise is standard normal, and the fitted design is `(1, x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub regression_fn: RegressionFn,
    pub sigma_law: SigmaLaw,
    /// Sample size per replicate.
    pub n: usize,
    /// Number of replicates.
    pub replicates: usize,
    /// Base seed; replicate r uses RNG substream (seed, r).
    pub seed: u64,
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        self.regression_fn.validate()?;
        self.sigma_law.validate()?;
        if self.n < 2 {
            return Err(Error::InsufficientObservations {
                needed: 2,
                got: self.n,
            });
        }
        Ok(())
    }

    /// The quadratic benchmark with the three-point sigma law
    /// {0.01: 0.05, 0.1: 0.9, 1: 0.05}, independent of x.
    pub fn quadratic_discrete(n: usize, replicates: usize, seed: u64) -> Self {
        Self {
            regression_fn: RegressionFn::Quadratic,
            sigma_law: SigmaLaw::Discrete(vec![(0.01, 0.05), (0.1, 0.9), (1.0, 0.05)]),
            n,
            replicates,
            seed,
        }
    }

    /// The quadratic benchmark with sigma a step function of x
    /// (0.01 below 0.05, 0.1 in the middle, 1 above 0.95).
    pub fn quadratic_dependent(n: usize, replicates: usize, seed: u64) -> Self {
        Self {
            regression_fn: RegressionFn::Quadratic,
            sigma_law: SigmaLaw::StepOfX {
                thresholds: vec![0.05, 0.95],
                values: vec![0.01, 0.1, 1.0],
            },
            n,
            replicates,
            seed,
        }
    }
}

/// Generate the dataset for one replicate, deterministically in
/// `(config.seed, replicate)`.
///
/// In the discrete case observations are labeled by their sigma value
/// (ascending among the values realized in the sample), so the grouped
/// estimators can be applied.
pub fn generate_dataset(config: &DgpConfig, replicate: usize) -> Result<RegressionData> {
    config.validate()?;
    let n = config.n;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(replicate as u64);

    let mut xs = Vec::with_capacity(n);
    let mut sigmas = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = rng.random();
        let sigma = match &config.sigma_law {
            SigmaLaw::Discrete(atoms) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = atoms[atoms.len() - 1].0;
                for &(value, prob) in atoms {
                    acc += prob;
                    if u < acc {
                        chosen = value;
                        break;
                    }
                }
                chosen
            }
            law @ SigmaLaw::StepOfX { .. } => law.sigma_at(x).expect("step law"),
        };
        let eps: f64 = StandardNormal.sample(&mut rng);
        xs.push(x);
        sigmas.push(sigma);
        ys.push(config.regression_fn.eval(x) + sigma * eps);
    }

    let groups = match &config.sigma_law {
        SigmaLaw::Discrete(_) => {
            let mut observed: Vec<f64> = sigmas.clone();
            observed.sort_by(|a, b| a.partial_cmp(b).unwrap());
            observed.dedup();
            Some(
                sigmas
                    .iter()
                    .map(|s| observed.iter().position(|v| v == s).unwrap() + 1)
                    .collect(),
            )
        }
        SigmaLaw::StepOfX { .. } => None,
    };

    let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
    RegressionData::new(x, DVector::from_vec(ys), DVector::from_vec(sigmas), groups)
}

/// Population quantities of the configured process, computed by adaptive
/// quadrature: the best linear approximation, the design and misspecification
/// matrices, the optimal variance shift, and the almost-sure limit of the
/// inverse-variance-weighted estimator (equal to beta when sigma is
/// independent of x).
#[derive(Debug, Clone)]
pub struct OracleQuantities {
    pub beta: DVector<f64>,
    pub design_inverse: DMatrix<f64>,
    pub misspec: DMatrix<f64>,
    pub delta: f64,
    pub wls_limit: DVector<f64>,
}

fn segment_points(config: &DgpConfig) -> Vec<f64> {
    let mut pts = vec![0.0, 1.0];
    pts.extend(config.regression_fn.knots());
    if let SigmaLaw::StepOfX { thresholds, .. } = &config.sigma_law {
        pts.extend(thresholds.iter().copied());
    }
    pts.retain(|&x| (0.0..=1.0).contains(&x));
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    pts
}

fn solve_2x2(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    m.clone().lu().solve(rhs).ok_or(Error::SingularCovariance)
}

pub fn oracle_quantities(config: &DgpConfig, gamma: GammaFunctional) -> Result<OracleQuantities> {
    config.validate()?;
    let pts = segment_points(config);
    let tol = ORACLE_TOLERANCE;
    let f = |x: f64| config.regression_fn.eval(x);
    let quad = |g: &dyn Fn(f64) -> f64| quadrature::integrate_segments(&g, &pts, tol);

    // Second moments of the design row (1, x) under Unif(0, 1).
    let ex = quad(&|x| x)?;
    let exx = quad(&|x| x * x)?;
    let second_moment = DMatrix::from_row_slice(2, 2, &[1.0, ex, ex, exx]);
    let exf = DVector::from_row_slice(&[quad(&|x| f(x))?, quad(&|x| x * f(x))?]);
    let beta = solve_2x2(&second_moment, &exf)?;

    let design_inverse = symmetrized(
        &second_moment
            .clone()
            .try_inverse()
            .ok_or(Error::SingularCovariance)?,
    );

    let b0 = beta[0];
    let b1 = beta[1];
    let g = move |x: f64| f(x) - b0 - b1 * x;
    let eg2 = quad(&|x| g(x) * g(x))?;
    let eg2x = quad(&|x| g(x) * g(x) * x)?;
    let eg2xx = quad(&|x| g(x) * g(x) * x * x)?;
    let middle = DMatrix::from_row_slice(2, 2, &[eg2, eg2x, eg2x, eg2xx]);
    let misspec = symmetrized(&(&design_inverse * middle * &design_inverse));

    let gamma_b = gamma.apply(&design_inverse);
    if gamma_b <= 0.0 {
        return Err(Error::InvalidGamma(gamma_b));
    }
    let delta = (gamma.apply(&misspec) / gamma_b).max(0.0);

    let wls_limit = if config.sigma_law.is_dependent() {
        let w = |x: f64| {
            let s = config.sigma_law.sigma_at(x).expect("dependent law");
            1.0 / (s * s)
        };
        let m = DMatrix::from_row_slice(
            2,
            2,
            &[
                quad(&|x| w(x))?,
                quad(&|x| w(x) * x)?,
                quad(&|x| w(x) * x)?,
                quad(&|x| w(x) * x * x)?,
            ],
        );
        let rhs = DVector::from_row_slice(&[quad(&|x| w(x) * f(x))?, quad(&|x| w(x) * x * f(x))?]);
        solve_2x2(&m, &rhs)?
    } else {
        beta.clone()
    };

    Ok(OracleQuantities {
        beta,
        design_inverse,
        misspec,
        delta,
        wls_limit,
    })
}

/// Oracle analogue of the plug-in covariance: the same sample-weight formula,
/// evaluated with the true misspecification and design matrices.
pub fn oracle_covariance(
    oracle: &OracleQuantities,
    data: &RegressionData,
    weights: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    estimators::plugin_covariance(data, &oracle.misspec, &oracle.design_inverse, weights)
}

/// Asymptotic covariance of OLS under the dependent sigma law, where the
/// misspecification and noise terms no longer factor:
/// `B E[(g^2(x) + sigma^2(x)) x x^T] B`.
pub fn dependent_ols_covariance(config: &DgpConfig) -> Result<DMatrix<f64>> {
    let oracle = oracle_quantities(config, GammaFunctional::Trace)?;
    let pts = segment_points(config);
    let f = |x: f64| config.regression_fn.eval(x);
    let beta = oracle.beta.clone();
    let core = move |x: f64| {
        let s = config
            .sigma_law
            .sigma_at(x)
            .expect("dependent covariance needs a step sigma law");
        let gv = f(x) - beta[0] - beta[1] * x;
        gv * gv + s * s
    };
    let quad = |g: &dyn Fn(f64) -> f64| quadrature::integrate_segments(&g, &pts, ORACLE_TOLERANCE);
    let m = DMatrix::from_row_slice(
        2,
        2,
        &[
            quad(&|x| core(x))?,
            quad(&|x| core(x) * x)?,
            quad(&|x| core(x) * x)?,
            quad(&|x| core(x) * x * x)?,
        ],
    );
    Ok(symmetrized(
        &(&oracle.design_inverse * m * &oracle.design_inverse),
    ))
}

/// Which asymptotic-covariance estimator to evaluate coverage with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarianceEstimator {
    /// Plug-in combination of estimated misspecification and design matrices.
    #[serde(rename = "nu1")]
    PlugIn,
    /// Residual sandwich; needs no sigma values.
    #[serde(rename = "nu2")]
    Sandwich,
    /// Plug-in formula with the true matrices (simulation diagnostics only).
    #[serde(rename = "oracle")]
    Oracle,
}

impl VarianceEstimator {
    /// Column name in the per-replicate CSV.
    pub fn column(&self) -> &'static str {
        match self {
            Self::PlugIn => "covered_nu1",
            Self::Sandwich => "covered_nu2",
            Self::Oracle => "covered_or",
        }
    }

    /// Row label in the summary CSV.
    pub fn label(&self) -> &'static str {
        match self {
            Self::PlugIn => "nu1",
            Self::Sandwich => "nu2",
            Self::Oracle => "oracle",
        }
    }
}

/// One successful replicate of one strategy.
#[derive(Debug, Clone)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub beta: DVector<f64>,
    pub delta: Option<f64>,
    /// Coverage flags, parallel to the requested estimator list.
    pub covered: Vec<bool>,
}

/// Aggregated results for one strategy.
#[derive(Debug, Clone)]
pub struct StrategyReport {
    pub strategy: WeightStrategy,
    pub outcomes: Vec<ReplicateOutcome>,
    pub failures: usize,
    pub mean: DVector<f64>,
    /// Empirical covariance of the estimates across replicates.
    pub covariance: DMatrix<f64>,
    /// Coverage fractions, parallel to the requested estimator list.
    pub coverage: Vec<f64>,
    /// Total fitting/evaluation time across replicates (metadata; not written
    /// to any CSV so outputs stay byte-reproducible).
    pub runtime: Duration,
}

/// Full Monte Carlo report.
#[derive(Debug, Clone)]
pub struct SimReport {
    pub config: DgpConfig,
    pub gamma: GammaFunctional,
    pub estimators: Vec<VarianceEstimator>,
    pub oracle: OracleQuantities,
    pub strategies: Vec<StrategyReport>,
}

struct RawOutcome {
    beta: DVector<f64>,
    delta: Option<f64>,
    covered: Vec<bool>,
    elapsed: Duration,
}

/// Per-replicate shared quantities: the estimated design inverse and, when the
/// plug-in covariance is requested, a misspecification matrix estimated from
/// the adaptive known-variance procedure's final coefficients. One consistent
/// estimate serves every weighting's plug-in covariance.
struct ReplicateContext {
    design_inverse: Result<DMatrix<f64>>,
    plugin_misspec: Option<Result<DMatrix<f64>>>,
}

fn clone_err(e: &Error) -> Error {
    Error::InvalidData(e.to_string())
}

fn replicate_context(
    data: &RegressionData,
    gamma: GammaFunctional,
    needs_plugin: bool,
) -> ReplicateContext {
    let design_inverse = estimators::design_inverse(data);
    let plugin_misspec = if needs_plugin {
        Some(estimators::estimate_misspec(data, gamma).map(|est| est.misspec))
    } else {
        None
    };
    ReplicateContext {
        design_inverse,
        plugin_misspec,
    }
}

fn evaluate_strategy(
    data: &RegressionData,
    strategy: &WeightStrategy,
    variance_estimators: &[VarianceEstimator],
    gamma: GammaFunctional,
    oracle: &OracleQuantities,
    shared: &ReplicateContext,
) -> Result<RawOutcome> {
    let start = Instant::now();
    let fitted = estimators::fit(data, strategy, gamma)?;
    let design_inverse = shared.design_inverse.as_ref().map_err(clone_err)?;

    let mut covered = Vec::with_capacity(variance_estimators.len());
    for estimator in variance_estimators {
        let nu = match estimator {
            VarianceEstimator::PlugIn => {
                let misspec = shared
                    .plugin_misspec
                    .as_ref()
                    .expect("plug-in context computed when requested")
                    .as_ref()
                    .map_err(clone_err)?;
                estimators::plugin_covariance(data, misspec, design_inverse, &fitted.weights)?
            }
            VarianceEstimator::Sandwich => estimators::sandwich_covariance(
                data,
                design_inverse,
                &fitted.weights,
                &fitted.beta,
            )?,
            VarianceEstimator::Oracle => oracle_covariance(oracle, data, &fitted.weights)?,
        };
        covered.push(estimators::confidence_region_contains(
            &fitted.beta,
            &nu,
            &oracle.beta,
            CONFIDENCE_LEVEL,
            data.n(),
        )?);
    }
    Ok(RawOutcome {
        beta: fitted.beta,
        delta: fitted.delta,
        covered,
        elapsed: start.elapsed(),
    })
}

/// Run the study: for every replicate and strategy, fit, evaluate each
/// requested covariance estimator, and test membership of the true
/// coefficients in the 95% confidence region.
///
/// Replicates are shared across strategies and evaluated in parallel;
/// aggregation happens in replicate order, so the report is bit-identical for
/// a given config regardless of thread count. Replicates on which a strategy
/// fails (singular design, degenerate group) are excluded from that strategy's
/// aggregates and counted in `failures`.
pub fn run_monte_carlo(
    config: &DgpConfig,
    strategies: &[WeightStrategy],
    variance_estimators: &[VarianceEstimator],
    gamma: GammaFunctional,
) -> Result<SimReport> {
    config.validate()?;
    let oracle = oracle_quantities(config, gamma)?;
    let needs_plugin = variance_estimators.contains(&VarianceEstimator::PlugIn);

    let per_replicate: Vec<Vec<Result<RawOutcome>>> = (0..config.replicates)
        .into_par_iter()
        .map(|rep| {
            let data = match generate_dataset(config, rep) {
                Ok(d) => d,
                Err(e) => {
                    let msg = e.to_string();
                    return strategies
                        .iter()
                        .map(|_| Err(Error::InvalidData(msg.clone())))
                        .collect();
                }
            };
            let shared = replicate_context(&data, gamma, needs_plugin);
            strategies
                .iter()
                .map(|strategy| {
                    evaluate_strategy(
                        &data,
                        strategy,
                        variance_estimators,
                        gamma,
                        &oracle,
                        &shared,
                    )
                })
                .collect()
        })
        .collect();

    let mut reports = Vec::with_capacity(strategies.len());
    for (s_idx, strategy) in strategies.iter().enumerate() {
        let mut outcomes = Vec::new();
        let mut failures = 0usize;
        let mut runtime = Duration::ZERO;
        for (rep, row) in per_replicate.iter().enumerate() {
            match &row[s_idx] {
                Ok(raw) => {
                    runtime += raw.elapsed;
                    outcomes.push(ReplicateOutcome {
                        replicate: rep,
                        beta: raw.beta.clone(),
                        delta: raw.delta,
                        covered: raw.covered.clone(),
                    });
                }
                Err(_) => failures += 1,
            }
        }
        let (mean, covariance) = mean_and_covariance(&outcomes, 2);
        let coverage = (0..variance_estimators.len())
            .map(|e| {
                if outcomes.is_empty() {
                    0.0
                } else {
                    outcomes.iter().filter(|o| o.covered[e]).count() as f64 / outcomes.len() as f64
                }
            })
            .collect();
        reports.push(StrategyReport {
            strategy: strategy.clone(),
            outcomes,
            failures,
            mean,
            covariance,
            coverage,
            runtime,
        });
    }

    Ok(SimReport {
        config: config.clone(),
        gamma,
        estimators: variance_estimators.to_vec(),
        oracle,
        strategies: reports,
    })
}

fn mean_and_covariance(outcomes: &[ReplicateOutcome], p: usize) -> (DVector<f64>, DMatrix<f64>) {
    let k = outcomes.len();
    if k == 0 {
        return (DVector::zeros(p), DMatrix::zeros(p, p));
    }
    let mut mean = DVector::zeros(p);
    for o in outcomes {
        mean += &o.beta;
    }
    mean /= k as f64;
    let mut cov = DMatrix::zeros(p, p);
    if k > 1 {
        for o in outcomes {
            let d = &o.beta - &mean;
            cov += &d * d.transpose();
        }
        cov /= (k - 1) as f64;
    }
    (mean, cov)
}

/// Confidence-ellipse geometry for a coefficient covariance: unit axis
/// directions (columns, sorted by decreasing axis length) and semi-axis
/// lengths `sqrt(eigenvalue * chi2_p(level) / n)`.
#[derive(Debug, Clone)]
pub struct Ellipse {
    pub semi_axes: DVector<f64>,
    pub axes: DMatrix<f64>,
}

pub fn asymptotic_ellipse(covariance: &DMatrix<f64>, level: f64, n: usize) -> Result<Ellipse> {
    let p = covariance.nrows();
    let eig = symmetrized(covariance).symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
        return Err(Error::SingularCovariance);
    }
    let q = stats::chi_squared_quantile(p, level);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let mut semi_axes = DVector::zeros(p);
    let mut axes = DMatrix::zeros(p, p);
    for (out, &idx) in order.iter().enumerate() {
        semi_axes[out] = (eig.eigenvalues[idx] * q / n as f64).sqrt();
        let mut col = eig.eigenvectors.column(idx).clone_owned();
        // Sign convention: largest-magnitude component positive.
        let lead = col
            .iter()
            .copied()
            .fold(0.0_f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if lead < 0.0 {
            col = -col;
        }
        axes.set_column(out, &col);
    }
    Ok(Ellipse { semi_axes, axes })
}

/// Theoretical asymptotic covariance of a strategy's weighting under the
/// configured law, when one is defined: the weight-moment form for the
/// discrete law, the dependent OLS sandwich for the step law, `None` otherwise.
pub fn theoretical_covariance(
    config: &DgpConfig,
    oracle: &OracleQuantities,
    strategy: &WeightStrategy,
) -> Result<Option<DMatrix<f64>>> {
    match &config.sigma_law {
        SigmaLaw::Discrete(atoms) => {
            let delta = oracle.delta;
            let weight_fn: Box<dyn Fn(f64) -> f64> = match strategy {
                WeightStrategy::Identity => Box::new(|_| 1.0),
                WeightStrategy::InverseVariance => Box::new(|s| 1.0 / (s * s)),
                WeightStrategy::AdaptiveKnown { .. } | WeightStrategy::AdaptiveGrouped { .. } => {
                    Box::new(move |s| 1.0 / (s * s + delta))
                }
                WeightStrategy::FixedDelta(d) => {
                    let d = *d;
                    Box::new(move |s| 1.0 / (s * s + d))
                }
                WeightStrategy::FixedWeights(_) => return Ok(None),
            };
            let moments = WeightMoments::from_discrete_law(atoms, weight_fn);
            estimators::asymptotic_covariance(&oracle.misspec, &oracle.design_inverse, &moments)
                .map(Some)
        }
        SigmaLaw::StepOfX { .. } => match strategy {
            WeightStrategy::Identity => dependent_ols_covariance(config).map(Some),
            _ => Ok(None),
        },
    }
}

/// Write one row per replicate per strategy:
/// `replicate,strategy,beta_1..beta_p,<covered flags>`.
pub fn write_replicates_csv<W: Write>(report: &SimReport, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let p = report.oracle.beta.len();
    let mut header = vec!["replicate".to_string(), "strategy".to_string()];
    for j in 0..p {
        header.push(format!("beta_{}", j + 1));
    }
    for est in &report.estimators {
        header.push(est.column().to_string());
    }
    wtr.write_record(&header)?;
    for strat in &report.strategies {
        let label = strat.strategy.label();
        for o in &strat.outcomes {
            let mut row = vec![o.replicate.to_string(), label.to_string()];
            for j in 0..p {
                row.push(format!("{}", o.beta[j]));
            }
            for &c in &o.covered {
                row.push(if c { "1".into() } else { "0".into() });
            }
            wtr.write_record(&row)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Write the coverage summary: one row per estimator, one column per strategy,
/// followed by a failure-count row.
pub fn write_summary_csv<W: Write>(report: &SimReport, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec!["estimator".to_string()];
    header.extend(
        report
            .strategies
            .iter()
            .map(|s| s.strategy.label().to_string()),
    );
    wtr.write_record(&header)?;
    for (e_idx, est) in report.estimators.iter().enumerate() {
        let mut row = vec![est.label().to_string()];
        for strat in &report.strategies {
            row.push(format!("{}", strat.coverage[e_idx]));
        }
        wtr.write_record(&row)?;
    }
    let mut failures = vec!["failures".to_string()];
    for strat in &report.strategies {
        failures.push(strat.failures.to_string());
    }
    wtr.write_record(&failures)?;
    wtr.flush()?;
    Ok(())
}

/// Write the theoretical confidence ellipses (center plus axis geometry) for
/// every strategy whose weighting has a defined asymptotic covariance.
pub fn write_ellipses_csv<W: Write>(report: &SimReport, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record([
        "strategy",
        "center_1",
        "center_2",
        "semi_axis_1",
        "semi_axis_2",
        "axis1_1",
        "axis1_2",
        "axis2_1",
        "axis2_2",
    ])?;
    for strat in &report.strategies {
        let Some(nu) = theoretical_covariance(&report.config, &report.oracle, &strat.strategy)?
        else {
            continue;
        };
        // The covariance of beta-hat at sample size n is nu / n.
        let ellipse = asymptotic_ellipse(&nu, CONFIDENCE_LEVEL, report.config.n)?;
        wtr.write_record(&[
            strat.strategy.label().to_string(),
            format!("{}", report.oracle.beta[0]),
            format!("{}", report.oracle.beta[1]),
            format!("{}", ellipse.semi_axes[0]),
            format!("{}", ellipse.semi_axes[1]),
            format!("{}", ellipse.axes[(0, 0)]),
            format!("{}", ellipse.axes[(1, 0)]),
            format!("{}", ellipse.axes[(0, 1)]),
            format!("{}", ellipse.axes[(1, 1)]),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
