//! Weighted least-squares machinery for misspecified linear regression with
//! heteroskedastic errors.
//!
//! When the response is a nonlinear function of the covariates, the target of
//! estimation is the best linear approximation `beta`, and the asymptotic
//! variance of a weighted estimator splits into a misspecification part `A`
//! and a noise part `B` (the inverse design second moment). The weighting
//! `w(sigma) = (sigma^2 + delta)^-1`, with `delta` the ratio of a linear
//! functional of `A` to the same functional of `B`, minimizes the asymptotic
//! variance; this module estimates all of these quantities from data, both
//! when the error variances are known and when only group membership of the
//! variances is known.
//!
//! Every operation is a pure function of its inputs, and datasets are
//! immutable after construction, so everything here can be called freely from
//! multiple threads.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{self, symmetrized};
use crate::stats;

/// A regression dataset: design matrix, responses, per-observation error
/// standard deviations, and optional group labels for the grouped-variance
/// estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    x: DMatrix<f64>,
    y: DVector<f64>,
    sigma: DVector<f64>,
    groups: Option<Vec<usize>>,
    n_groups: usize,
}

impl RegressionData {
    /// Build a dataset, validating all construction invariants: consistent
    /// lengths, `n >= p >= 1`, strictly positive finite sigmas, and group
    /// labels covering `1..=M` with every group nonempty.
    pub fn new(
        x: DMatrix<f64>,
        y: DVector<f64>,
        sigma: DVector<f64>,
        groups: Option<Vec<usize>>,
    ) -> Result<Self> {
        let (n, p) = x.shape();
        if p < 1 {
            return Err(Error::InvalidData("design matrix has no columns".into()));
        }
        if n < p {
            return Err(Error::InsufficientObservations { needed: p, got: n });
        }
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                what: "response vector",
                expected: n,
                got: y.len(),
            });
        }
        if sigma.len() != n {
            return Err(Error::DimensionMismatch {
                what: "sigma vector",
                expected: n,
                got: sigma.len(),
            });
        }
        if sigma.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::InvalidData(
                "every sigma must be finite and strictly positive".into(),
            ));
        }
        let n_groups = match &groups {
            None => 0,
            Some(g) => {
                if g.len() != n {
                    return Err(Error::DimensionMismatch {
                        what: "group labels",
                        expected: n,
                        got: g.len(),
                    });
                }
                let m = *g.iter().max().unwrap_or(&0);
                if g.contains(&0) {
                    return Err(Error::InvalidData("group labels are 1-based".into()));
                }
                for label in 1..=m {
                    if !g.contains(&label) {
                        return Err(Error::EmptyGroup(label));
                    }
                }
                m
            }
        };
        Ok(Self {
            x,
            y,
            sigma,
            groups,
            n_groups,
        })
    }

    /// Read a dataset from CSV with header `y,sigma,group,x1..xp`; the group
    /// column is optional and all other non-reserved columns are taken as
    /// covariates in file order.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let find = |name: &str| headers.iter().position(|h| h.trim() == name);
        let y_col = find("y").ok_or_else(|| Error::MissingColumn("y".into()))?;
        let sigma_col = find("sigma").ok_or_else(|| Error::MissingColumn("sigma".into()))?;
        let group_col = find("group");
        let x_cols: Vec<usize> = (0..headers.len())
            .filter(|&i| i != y_col && i != sigma_col && Some(i) != group_col)
            .collect();
        if x_cols.is_empty() {
            return Err(Error::MissingColumn("x1".into()));
        }

        let parse = |field: &str| -> Result<f64> {
            field.trim().parse::<f64>().map_err(|_| Error::ParseNumber {
                value: field.to_string(),
            })
        };

        let mut y = Vec::new();
        let mut sigma = Vec::new();
        let mut groups = Vec::new();
        let mut x_rows: Vec<f64> = Vec::new();
        for record in rdr.records() {
            let record = record?;
            y.push(parse(&record[y_col])?);
            sigma.push(parse(&record[sigma_col])?);
            if let Some(g) = group_col {
                let label = record[g]
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| Error::ParseNumber {
                        value: record[g].to_string(),
                    })?;
                groups.push(label);
            }
            for &c in &x_cols {
                x_rows.push(parse(&record[c])?);
            }
        }
        let n = y.len();
        let x = DMatrix::from_row_slice(n, x_cols.len(), &x_rows);
        Self::new(
            x,
            DVector::from_vec(y),
            DVector::from_vec(sigma),
            group_col.map(|_| groups),
        )
    }

    pub fn from_csv_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn sigma(&self) -> &DVector<f64> {
        &self.sigma
    }

    pub fn groups(&self) -> Option<&[usize]> {
        self.groups.as_deref()
    }

    /// Number of groups M (0 when no group labels are attached).
    pub fn n_groups(&self) -> usize {
        self.n_groups
    }
}

fn default_iterations() -> usize {
    2
}

/// Which weighting to apply when fitting.
///
/// The adaptive variants iterate the estimate-delta / reweight / resolve cycle
/// starting from ordinary least squares; two iterations is the default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightStrategy {
    /// Ordinary least squares (all weights one).
    Identity,
    /// Standard WLS with weights `sigma^-2`.
    InverseVariance,
    /// Estimated optimal weights `(sigma^2 + delta_hat)^-1` with sigmas known.
    AdaptiveKnown {
        #[serde(default = "default_iterations")]
        iterations: usize,
    },
    /// Estimated optimal weights from per-group residual moments; needs group
    /// labels but no sigma values.
    AdaptiveGrouped {
        #[serde(default = "default_iterations")]
        iterations: usize,
    },
    /// Caller-supplied positive weights.
    FixedWeights(Vec<f64>),
    /// Weights `(sigma^2 + delta)^-1` for a fixed nonnegative delta.
    FixedDelta(f64),
}

impl WeightStrategy {
    /// Adaptive known-variance weighting with the default two iterations.
    pub fn adaptive_known() -> Self {
        Self::AdaptiveKnown { iterations: 2 }
    }

    /// Adaptive grouped-variance weighting with the default two iterations.
    pub fn adaptive_grouped() -> Self {
        Self::AdaptiveGrouped { iterations: 2 }
    }

    /// Short stable name used in CSV output.
    pub fn label(&self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::InverseVariance => "inverse_variance",
            Self::AdaptiveKnown { .. } => "adaptive_known",
            Self::AdaptiveGrouped { .. } => "adaptive_grouped",
            Self::FixedWeights(_) => "fixed_weights",
            Self::FixedDelta(_) => "fixed_delta",
        }
    }
}

/// Linear functional on p x p matrices, positive on positive definite input;
/// selects which scalar summary of the asymptotic variance is minimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaFunctional {
    /// Sum of the diagonal (minimize total variance of the estimates).
    #[default]
    Trace,
    /// A single diagonal entry, zero-based (minimize one coordinate's variance).
    Coordinate(usize),
}

impl GammaFunctional {
    pub fn apply(&self, m: &DMatrix<f64>) -> f64 {
        match self {
            Self::Trace => m.trace(),
            Self::Coordinate(j) => {
                assert!(*j < m.nrows(), "coordinate index out of range");
                m[(*j, *j)]
            }
        }
    }
}

/// Estimates of the misspecification quantities: the inverse design second
/// moment, the misspecification matrix, the clamped variance shift, and (in
/// the grouped case) the per-group residual second moments.
#[derive(Debug, Clone)]
pub struct MisspecEstimates {
    pub design_inverse: DMatrix<f64>,
    pub misspec: DMatrix<f64>,
    pub delta: f64,
    pub group_moments: Option<Vec<DMatrix<f64>>>,
}

/// Outcome of a weighted fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// Estimated coefficients.
    pub beta: DVector<f64>,
    /// Realized weight diagonal.
    pub weights: DVector<f64>,
    /// Variance shift used, where the strategy defines one.
    pub delta: Option<f64>,
    /// Sandwich estimate of the asymptotic covariance of `sqrt(n)(beta_hat - beta)`.
    pub covariance: Option<DMatrix<f64>>,
    pub strategy: WeightStrategy,
    pub gamma: GammaFunctional,
}

/// Weighted least-squares solve: the minimizer of `sum w_i (y_i - x_i^T b)^2`.
pub fn solve_weighted(data: &RegressionData, w: &DVector<f64>) -> Result<DVector<f64>> {
    validate_weights(w, data.n())?;
    linalg::weighted_least_squares(data.design(), data.response(), w)
}

fn validate_weights(w: &DVector<f64>, n: usize) -> Result<()> {
    if w.len() != n {
        return Err(Error::DimensionMismatch {
            what: "weight vector",
            expected: n,
            got: w.len(),
        });
    }
    if w.iter().any(|wi| !wi.is_finite() || *wi <= 0.0) {
        return Err(Error::InvalidData(
            "weights must be finite and strictly positive".into(),
        ));
    }
    Ok(())
}

/// Inverse scaled design second moment `(n^-1 X^T X)^-1`, symmetrized.
pub fn design_inverse(data: &RegressionData) -> Result<DMatrix<f64>> {
    linalg::scaled_gram_inverse(data.design())
}

/// Per-observation squared-residual excess over the noise variance,
/// `(y_i - x_i^T beta)^2 - sigma_i^2`.
///
/// Entries may be negative; the clamp to zero happens only in [`optimal_delta`].
pub fn squared_nonlinearity(data: &RegressionData, beta: &DVector<f64>) -> Result<DVector<f64>> {
    if beta.len() != data.dim() {
        return Err(Error::DimensionMismatch {
            what: "coefficient vector",
            expected: data.dim(),
            got: beta.len(),
        });
    }
    let resid = data.response() - data.design() * beta;
    Ok(DVector::from_iterator(
        data.n(),
        resid
            .iter()
            .zip(data.sigma().iter())
            .map(|(r, s)| r * r - s * s),
    ))
}

/// Plug-in estimate of the misspecification matrix, weighting the
/// per-observation terms by `sigma^-4` and sandwiching with the design inverse.
pub fn misspec_matrix(
    data: &RegressionData,
    beta: &DVector<f64>,
    design_inv: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let g2 = squared_nonlinearity(data, beta)?;
    let p = data.dim();
    let mut middle = DMatrix::zeros(p, p);
    let mut weight_sum = 0.0;
    for i in 0..data.n() {
        let s = data.sigma()[i];
        let w4 = 1.0 / (s * s * s * s);
        weight_sum += w4;
        let row = data.design().row(i);
        let scale = g2[i] * w4;
        for j in 0..p {
            for k in 0..p {
                middle[(j, k)] += scale * row[j] * row[k];
            }
        }
    }
    middle /= weight_sum;
    Ok(symmetrized(&(design_inv.transpose() * middle * design_inv)))
}

/// Bundle of misspecification estimates produced by the adaptive
/// known-variance pipeline: the design inverse, the misspecification matrix
/// evaluated at the pipeline's final coefficients, the clamped variance
/// shift, and (when group labels are present) the per-group residual moments.
pub fn estimate_misspec(data: &RegressionData, gamma: GammaFunctional) -> Result<MisspecEstimates> {
    let design_inv = design_inverse(data)?;
    let adaptive = fit(data, &WeightStrategy::adaptive_known(), gamma)?;
    let misspec = misspec_matrix(data, &adaptive.beta, &design_inv)?;
    let delta = optimal_delta(&misspec, &design_inv, gamma)?;
    let moments = match data.groups() {
        Some(_) => Some(group_moments(data, &adaptive.beta)?),
        None => None,
    };
    Ok(MisspecEstimates {
        design_inverse: design_inv,
        misspec,
        delta,
        group_moments: moments,
    })
}

/// Estimated optimal variance shift `max(gamma(A_hat) / gamma(B_hat), 0)`.
pub fn optimal_delta(
    misspec: &DMatrix<f64>,
    design_inv: &DMatrix<f64>,
    gamma: GammaFunctional,
) -> Result<f64> {
    let gb = gamma.apply(design_inv);
    if gb <= 0.0 {
        return Err(Error::InvalidGamma(gb));
    }
    Ok((gamma.apply(misspec) / gb).max(0.0))
}

/// Estimated optimal weights `(sigma_i^2 + delta)^-1` for known sigmas.
pub fn optimal_weights_known(data: &RegressionData, delta: f64) -> DVector<f64> {
    DVector::from_iterator(data.n(), data.sigma().iter().map(|s| 1.0 / (s * s + delta)))
}

/// Per-group averages of squared residual times the covariate outer product.
///
/// Each matrix is a mean of positive semidefinite rank-one terms.
pub fn group_moments(data: &RegressionData, beta: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
    let labels = data
        .groups()
        .ok_or_else(|| Error::InvalidData("dataset has no group labels".into()))?;
    let p = data.dim();
    let resid = data.response() - data.design() * beta;
    let mut sums = vec![DMatrix::zeros(p, p); data.n_groups()];
    let mut counts = vec![0usize; data.n_groups()];
    for i in 0..data.n() {
        let m = labels[i] - 1;
        counts[m] += 1;
        let r2 = resid[i] * resid[i];
        let row = data.design().row(i);
        for j in 0..p {
            for k in 0..p {
                sums[m][(j, k)] += r2 * row[j] * row[k];
            }
        }
    }
    for (m, count) in counts.iter().enumerate() {
        if *count == 0 {
            return Err(Error::EmptyGroup(m + 1));
        }
        sums[m] /= *count as f64;
        sums[m] = symmetrized(&sums[m]);
    }
    Ok(sums)
}

/// Estimated optimal weights in the grouped-variance case:
/// `gamma(B_hat) / gamma(B_hat^T C_m B_hat)` per group label.
pub fn optimal_weights_grouped(
    moments: &[DMatrix<f64>],
    design_inv: &DMatrix<f64>,
    groups: &[usize],
    gamma: GammaFunctional,
) -> Result<DVector<f64>> {
    let gb = gamma.apply(design_inv);
    if gb <= 0.0 {
        return Err(Error::InvalidGamma(gb));
    }
    let mut per_group = Vec::with_capacity(moments.len());
    for (m, c) in moments.iter().enumerate() {
        let denom = gamma.apply(&(design_inv.transpose() * c * design_inv));
        if denom <= 1e-12 {
            return Err(Error::DegenerateGroupVariance(m + 1));
        }
        per_group.push(gb / denom);
    }
    Ok(DVector::from_iterator(
        groups.len(),
        groups.iter().map(|&label| per_group[label - 1]),
    ))
}

/// Fit the dataset with the requested weighting strategy.
///
/// Adaptive strategies start from the ordinary least-squares estimate and
/// iterate the reweight/resolve cycle the configured number of times. The
/// returned result carries the realized weights, the final variance shift
/// where one exists, and a sandwich estimate of the asymptotic covariance.
pub fn fit(
    data: &RegressionData,
    strategy: &WeightStrategy,
    gamma: GammaFunctional,
) -> Result<FitResult> {
    let n = data.n();
    let design_inv = design_inverse(data)?;
    let (beta, weights, delta) = match strategy {
        WeightStrategy::Identity => {
            let w = DVector::from_element(n, 1.0);
            (solve_weighted(data, &w)?, w, None)
        }
        WeightStrategy::InverseVariance => {
            let w = DVector::from_iterator(n, data.sigma().iter().map(|s| 1.0 / (s * s)));
            (solve_weighted(data, &w)?, w, None)
        }
        WeightStrategy::FixedWeights(w) => {
            let w = DVector::from_vec(w.clone());
            (solve_weighted(data, &w)?, w, None)
        }
        WeightStrategy::FixedDelta(delta) => {
            if !delta.is_finite() || *delta < 0.0 {
                return Err(Error::InvalidData("fixed delta must be nonnegative".into()));
            }
            let w = optimal_weights_known(data, *delta);
            (solve_weighted(data, &w)?, w, Some(*delta))
        }
        WeightStrategy::AdaptiveKnown { iterations } => {
            require_iterations(*iterations)?;
            let mut beta = solve_weighted(data, &DVector::from_element(n, 1.0))?;
            let mut weights = DVector::from_element(n, 1.0);
            let mut delta = 0.0;
            for _ in 0..*iterations {
                let misspec = misspec_matrix(data, &beta, &design_inv)?;
                delta = optimal_delta(&misspec, &design_inv, gamma)?;
                weights = optimal_weights_known(data, delta);
                beta = solve_weighted(data, &weights)?;
            }
            (beta, weights, Some(delta))
        }
        WeightStrategy::AdaptiveGrouped { iterations } => {
            require_iterations(*iterations)?;
            let labels = data.groups().ok_or_else(|| {
                Error::InvalidData("adaptive_grouped requires group labels".into())
            })?;
            let mut beta = solve_weighted(data, &DVector::from_element(n, 1.0))?;
            let mut weights = DVector::from_element(n, 1.0);
            for _ in 0..*iterations {
                let moments = group_moments(data, &beta)?;
                weights = optimal_weights_grouped(&moments, &design_inv, labels, gamma)?;
                beta = solve_weighted(data, &weights)?;
            }
            (beta, weights, None)
        }
    };
    let covariance = sandwich_covariance(data, &design_inv, &weights, &beta)?;
    Ok(FitResult {
        beta,
        weights,
        delta,
        covariance: Some(covariance),
        strategy: strategy.clone(),
        gamma,
    })
}

fn require_iterations(iterations: usize) -> Result<()> {
    if iterations == 0 {
        return Err(Error::InvalidData(
            "adaptive strategies need at least one iteration".into(),
        ));
    }
    Ok(())
}

/// Plug-in estimate of the asymptotic covariance for a given weighting,
/// combining the misspecification and noise terms:
/// `n [ (sum w^2) A + (sum w^2 sigma^2) B ] / (sum w)^2`.
pub fn plugin_covariance(
    data: &RegressionData,
    misspec: &DMatrix<f64>,
    design_inv: &DMatrix<f64>,
    weights: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    validate_weights(weights, data.n())?;
    let n = data.n() as f64;
    let sum_w: f64 = weights.iter().sum();
    let sum_w2: f64 = weights.iter().map(|w| w * w).sum();
    let sum_w2s2: f64 = weights
        .iter()
        .zip(data.sigma().iter())
        .map(|(w, s)| w * w * s * s)
        .sum();
    let cov = (misspec * (n * sum_w2) + design_inv * (n * sum_w2s2)) / (sum_w * sum_w);
    Ok(symmetrized(&cov))
}

/// Sandwich estimate of the asymptotic covariance from weighted squared
/// residuals; usable without knowing the sigmas. Positive semidefinite by
/// construction.
pub fn sandwich_covariance(
    data: &RegressionData,
    design_inv: &DMatrix<f64>,
    weights: &DVector<f64>,
    beta: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    validate_weights(weights, data.n())?;
    if beta.len() != data.dim() {
        return Err(Error::DimensionMismatch {
            what: "coefficient vector",
            expected: data.dim(),
            got: beta.len(),
        });
    }
    let p = data.dim();
    let resid = data.response() - data.design() * beta;
    let mut middle = DMatrix::zeros(p, p);
    for i in 0..data.n() {
        let scale = resid[i] * resid[i] * weights[i] * weights[i];
        let row = data.design().row(i);
        for j in 0..p {
            for k in 0..p {
                middle[(j, k)] += scale * row[j] * row[k];
            }
        }
    }
    let sum_w: f64 = weights.iter().sum();
    let cov = design_inv * middle * design_inv * (data.n() as f64) / (sum_w * sum_w);
    Ok(symmetrized(&cov))
}

/// Population moments of a weight function needed by [`asymptotic_covariance`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightMoments {
    /// E[w]
    pub mean_w: f64,
    /// E[w^2]
    pub mean_w_sq: f64,
    /// E[sigma^2 w^2]
    pub mean_sigma_sq_w_sq: f64,
}

impl WeightMoments {
    /// Moments of `w(sigma)` under a discrete sigma law given as
    /// `(value, probability)` atoms.
    pub fn from_discrete_law<F: Fn(f64) -> f64>(atoms: &[(f64, f64)], w: F) -> Self {
        let mut mean_w = 0.0;
        let mut mean_w_sq = 0.0;
        let mut mean_sigma_sq_w_sq = 0.0;
        for &(s, prob) in atoms {
            let wi = w(s);
            mean_w += prob * wi;
            mean_w_sq += prob * wi * wi;
            mean_sigma_sq_w_sq += prob * s * s * wi * wi;
        }
        Self {
            mean_w,
            mean_w_sq,
            mean_sigma_sq_w_sq,
        }
    }
}

/// Theoretical asymptotic covariance of `sqrt(n)(beta_hat - beta)` for a
/// weight function with the given moments:
/// `(E[w^2] A + E[sigma^2 w^2] B) / E[w]^2`.
pub fn asymptotic_covariance(
    misspec: &DMatrix<f64>,
    design_inv: &DMatrix<f64>,
    moments: &WeightMoments,
) -> Result<DMatrix<f64>> {
    if !moments.mean_w.is_finite() || moments.mean_w <= 0.0 {
        return Err(Error::InvalidMoments(moments.mean_w));
    }
    let cov = (misspec * moments.mean_w_sq + design_inv * moments.mean_sigma_sq_w_sq)
        / (moments.mean_w * moments.mean_w);
    Ok(symmetrized(&cov))
}

/// Whether `beta_ref` lies in the `level` confidence ellipsoid implied by an
/// asymptotic covariance estimate: `n (b - b0)^T C^-1 (b - b0) <= chi2_p(level)`.
pub fn confidence_region_contains(
    beta_hat: &DVector<f64>,
    covariance: &DMatrix<f64>,
    beta_ref: &DVector<f64>,
    level: f64,
    n: usize,
) -> Result<bool> {
    let p = beta_hat.len();
    if beta_ref.len() != p {
        return Err(Error::DimensionMismatch {
            what: "reference coefficients",
            expected: p,
            got: beta_ref.len(),
        });
    }
    let diff = beta_hat - beta_ref;
    let solved = covariance
        .clone()
        .lu()
        .solve(&diff)
        .ok_or(Error::SingularCovariance)?;
    if solved.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularCovariance);
    }
    let statistic = n as f64 * diff.dot(&solved);
    Ok(statistic <= stats::chi_squared_quantile(p, level))
}
