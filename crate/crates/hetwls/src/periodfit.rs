//! Multi-harmonic sinusoidal period estimation for irregularly sampled light
//! curves, with pluggable weighting of the observation uncertainties.
//!
//! At a fixed trial frequency the harmonic model is linear in its
//! coefficients, so a periodogram scan is a weighted least-squares fit per
//! grid frequency; the frequency estimate is the grid argmin of the weighted
//! residual sum of squares. Weighting by inverse variances is optimal only for
//! a correctly specified model; the `DeltaRefit` strategy estimates the
//! variance shift of the misspecification-optimal weighting at the unweighted
//! best fit and rescans with weights `(sigma^2 + delta)^-1`.
//!
//! Grid frequencies are evaluated in parallel (the curve is immutable during
//! a scan), and scans over different curves are themselves independent.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{self, GammaFunctional, RegressionData};
use crate::linalg;

/// Default period search range in days.
pub const DEFAULT_PERIOD_RANGE: (f64, f64) = (0.1, 10.0);
/// Default oversampling factor of the frequency grid.
pub const DEFAULT_OVERSAMPLE: f64 = 5.0;

/// An irregularly sampled light curve: observation times (days), magnitudes,
/// and per-point magnitude uncertainties.
#[derive(Debug, Clone, PartialEq)]
pub struct LightCurve {
    time: Vec<f64>,
    mag: Vec<f64>,
    sigma: Vec<f64>,
}

impl LightCurve {
    pub fn new(time: Vec<f64>, mag: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        let n = time.len();
        if mag.len() != n {
            return Err(Error::DimensionMismatch {
                what: "magnitude vector",
                expected: n,
                got: mag.len(),
            });
        }
        if sigma.len() != n {
            return Err(Error::DimensionMismatch {
                what: "uncertainty vector",
                expected: n,
                got: sigma.len(),
            });
        }
        if time.iter().chain(mag.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidData(
                "times and magnitudes must be finite".into(),
            ));
        }
        if sigma.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::InvalidData(
                "every uncertainty must be finite and strictly positive".into(),
            ));
        }
        Ok(Self { time, mag, sigma })
    }

    /// Read a curve from CSV with header `t,mag,err`.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::MissingColumn(name.into()))
        };
        let (t_col, m_col, e_col) = (col("t")?, col("mag")?, col("err")?);
        let parse = |field: &str| -> Result<f64> {
            field.trim().parse::<f64>().map_err(|_| Error::ParseNumber {
                value: field.to_string(),
            })
        };
        let mut time = Vec::new();
        let mut mag = Vec::new();
        let mut sigma = Vec::new();
        for record in rdr.records() {
            let record = record?;
            time.push(parse(&record[t_col])?);
            mag.push(parse(&record[m_col])?);
            sigma.push(parse(&record[e_col])?);
        }
        Self::new(time, mag, sigma)
    }

    pub fn from_csv_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    /// Write the curve as CSV with header `t,mag,err`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["t", "mag", "err"])?;
        for i in 0..self.len() {
            wtr.write_record(&[
                format!("{}", self.time[i]),
                format!("{}", self.mag[i]),
                format!("{}", self.sigma[i]),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn time(&self) -> &[f64] {
        &self.time
    }

    pub fn mag(&self) -> &[f64] {
        &self.mag
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// Max minus min observation time.
    pub fn time_span(&self) -> f64 {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &t in &self.time {
            lo = lo.min(t);
            hi = hi.max(t);
        }
        hi - lo
    }
}

/// How observation uncertainties enter the periodogram fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeriodWeighting {
    /// Weight by `sigma^-2` (maximum likelihood under a correct model).
    InverseVariance,
    /// Ignore the uncertainties.
    Identity,
    /// Scan unweighted, estimate the optimal variance shift at the best
    /// frequency, then rescan with weights `(sigma^2 + delta)^-1`.
    DeltaRefit,
}

impl PeriodWeighting {
    pub fn label(&self) -> &'static str {
        match self {
            Self::InverseVariance => "inverse_variance",
            Self::Identity => "identity",
            Self::DeltaRefit => "delta_refit",
        }
    }
}

/// Periodogram configuration: number of harmonics, trial frequency grid
/// (radians per day, strictly increasing), weighting, and the functional used
/// by `DeltaRefit`.
#[derive(Debug, Clone)]
pub struct PeriodogramConfig {
    pub harmonics: usize,
    pub omega_grid: Vec<f64>,
    pub weighting: PeriodWeighting,
    pub gamma: GammaFunctional,
}

impl PeriodogramConfig {
    pub fn new(harmonics: usize, omega_grid: Vec<f64>, weighting: PeriodWeighting) -> Self {
        Self {
            harmonics,
            omega_grid,
            weighting,
            gamma: GammaFunctional::Trace,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.harmonics == 0 {
            return Err(Error::InvalidData("need at least one harmonic".into()));
        }
        if self.omega_grid.is_empty() {
            return Err(Error::InvalidData("frequency grid is empty".into()));
        }
        if self.omega_grid[0] <= 0.0 {
            return Err(Error::InvalidData("frequencies must be positive".into()));
        }
        if self.omega_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidData(
                "frequency grid must strictly increase".into(),
            ));
        }
        let needed = 2 * self.harmonics + 2;
        if n < needed {
            return Err(Error::InsufficientObservations { needed, got: n });
        }
        Ok(())
    }
}

/// Uniform frequency grid covering `period_range = (p_min, p_max)` days with
/// spacing `2 pi * 0.1 / (time_span * oversample)`, the usual compromise that
/// keeps the periodogram peak resolved.
pub fn omega_grid(time_span: f64, period_range: (f64, f64), oversample: f64) -> Vec<f64> {
    let (p_min, p_max) = period_range;
    assert!(p_min > 0.0 && p_max > p_min, "invalid period range");
    assert!(time_span > 0.0 && oversample > 0.0);
    let omega_lo = 2.0 * std::f64::consts::PI / p_max;
    let omega_hi = 2.0 * std::f64::consts::PI / p_min;
    let step = 2.0 * std::f64::consts::PI * 0.1 / (time_span * oversample);
    let count = ((omega_hi - omega_lo) / step).ceil() as usize;
    (0..=count).map(|k| omega_lo + k as f64 * step).collect()
}

/// Default grid for a curve: periods 0.1 to 10 days at oversample 5.
pub fn default_omega_grid(lc: &LightCurve) -> Vec<f64> {
    omega_grid(lc.time_span(), DEFAULT_PERIOD_RANGE, DEFAULT_OVERSAMPLE)
}

/// Harmonic design matrix at a trial frequency: a column of ones followed by
/// `sin(k omega t), cos(k omega t)` pairs for `k = 1..=harmonics`.
pub fn design_matrix(omega: f64, time: &[f64], harmonics: usize) -> DMatrix<f64> {
    debug_assert!(omega > 0.0);
    let n = time.len();
    let p = 2 * harmonics + 1;
    let mut x = DMatrix::zeros(n, p);
    for (i, &t) in time.iter().enumerate() {
        x[(i, 0)] = 1.0;
        for k in 1..=harmonics {
            let (s, c) = (k as f64 * omega * t).sin_cos();
            x[(i, 2 * k - 1)] = s;
            x[(i, 2 * k)] = c;
        }
    }
    x
}

/// Weighted least-squares fit of the harmonic model at one frequency.
/// Returns the coefficients and the weighted residual sum of squares.
pub fn fit_at_frequency(
    lc: &LightCurve,
    omega: f64,
    harmonics: usize,
    weights: &DVector<f64>,
) -> Result<(DVector<f64>, f64)> {
    let n = lc.len();
    if weights.len() != n {
        return Err(Error::DimensionMismatch {
            what: "weight vector",
            expected: n,
            got: weights.len(),
        });
    }
    let x = design_matrix(omega, lc.time(), harmonics);
    let y = DVector::from_column_slice(lc.mag());
    let beta = linalg::weighted_least_squares(&x, &y, weights)?;
    let rss = linalg::weighted_rss(&x, &y, weights, &beta);
    Ok((beta, rss))
}

/// Result of a periodogram scan.
#[derive(Debug, Clone)]
pub struct PeriodogramResult {
    /// Best frequency (grid argmin of the weighted RSS).
    pub omega: f64,
    /// Weighted RSS per grid frequency; infinite where the design was singular.
    pub rss: Vec<f64>,
    /// Harmonic coefficients at the best frequency under the final weights.
    pub coefficients: DVector<f64>,
    /// Per-harmonic amplitudes (nonnegative).
    pub amplitudes: Vec<f64>,
    /// Per-harmonic phases in (-pi, pi].
    pub phases: Vec<f64>,
    /// Variance shift used by the rescan (`DeltaRefit` only).
    pub delta: Option<f64>,
}

impl PeriodogramResult {
    pub fn period(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.omega
    }
}

/// Scan the grid with fixed weights; singular frequencies score +inf.
/// Ties within 1e-15 of the running minimum keep the lower frequency.
fn scan(
    lc: &LightCurve,
    grid: &[f64],
    harmonics: usize,
    weights: &DVector<f64>,
) -> Result<(usize, Vec<f64>)> {
    let rss: Vec<f64> = grid
        .par_iter()
        .map(
            |&omega| match fit_at_frequency(lc, omega, harmonics, weights) {
                Ok((_, r)) => r,
                Err(_) => f64::INFINITY,
            },
        )
        .collect();
    let mut best: Option<usize> = None;
    for (i, &r) in rss.iter().enumerate() {
        if !r.is_finite() {
            continue;
        }
        match best {
            None => best = Some(i),
            Some(b) if r < rss[b] - 1e-15 => best = Some(i),
            _ => {}
        }
    }
    let best = best.ok_or(Error::AllFrequenciesSingular)?;
    Ok((best, rss))
}

/// Run the periodogram with the configured weighting.
///
/// `DeltaRefit` performs two scans: an unweighted scan to locate a first
/// best frequency, estimation of the optimal variance shift from the linear
/// model at that frequency, and a full rescan with the shifted weights.
pub fn periodogram(lc: &LightCurve, config: &PeriodogramConfig) -> Result<PeriodogramResult> {
    let n = lc.len();
    config.validate(n)?;
    let harmonics = config.harmonics;
    let grid = &config.omega_grid;

    let ones = DVector::from_element(n, 1.0);
    let inverse_variance = DVector::from_iterator(n, lc.sigma().iter().map(|s| 1.0 / (s * s)));

    let (weights, delta) = match config.weighting {
        PeriodWeighting::Identity => (ones, None),
        PeriodWeighting::InverseVariance => (inverse_variance, None),
        PeriodWeighting::DeltaRefit => {
            let (first_best, _) = scan(lc, grid, harmonics, &ones)?;
            let delta = delta_at_frequency(lc, grid[first_best], harmonics, config.gamma)?;
            let w = DVector::from_iterator(n, lc.sigma().iter().map(|s| 1.0 / (s * s + delta)));
            (w, Some(delta))
        }
    };

    let (best, rss) = scan(lc, grid, harmonics, &weights)?;
    let (coefficients, _) = fit_at_frequency(lc, grid[best], harmonics, &weights)?;
    let (amplitudes, phases) = amplitudes_phases(&coefficients);
    Ok(PeriodogramResult {
        omega: grid[best],
        rss,
        coefficients,
        amplitudes,
        phases,
        delta,
    })
}

/// Estimate the optimal variance shift from the linearized model at a fixed
/// frequency, using the unweighted fit as the root-n-consistent start.
fn delta_at_frequency(
    lc: &LightCurve,
    omega: f64,
    harmonics: usize,
    gamma: GammaFunctional,
) -> Result<f64> {
    let x = design_matrix(omega, lc.time(), harmonics);
    let data = RegressionData::new(
        x,
        DVector::from_column_slice(lc.mag()),
        DVector::from_column_slice(lc.sigma()),
        None,
    )?;
    let design_inv = estimators::design_inverse(&data)?;
    let beta = estimators::solve_weighted(&data, &DVector::from_element(lc.len(), 1.0))?;
    let misspec = estimators::misspec_matrix(&data, &beta, &design_inv)?;
    estimators::optimal_delta(&misspec, &design_inv, gamma)
}

/// Recover per-harmonic amplitudes and phases from the linear coefficients:
/// `a_k = hypot(b_k1, b_k2)`, `phi_k = atan2(b_k2, b_k1)` in (-pi, pi], so that
/// `a_k sin(k w t + phi_k) = b_k1 sin(k w t) + b_k2 cos(k w t)`.
pub fn amplitudes_phases(beta: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
    let harmonics = (beta.len() - 1) / 2;
    let mut amplitudes = Vec::with_capacity(harmonics);
    let mut phases = Vec::with_capacity(harmonics);
    for k in 1..=harmonics {
        let b1 = beta[2 * k - 1];
        let b2 = beta[2 * k];
        let a = b1.hypot(b2);
        let phi = if a == 0.0 {
            0.0
        } else {
            let raw = b2.atan2(b1);
            if raw <= -std::f64::consts::PI {
                raw + 2.0 * std::f64::consts::PI
            } else {
                raw
            }
        };
        amplitudes.push(a);
        phases.push(phi);
    }
    (amplitudes, phases)
}

/// Uniform random subsample without replacement, preserving time order;
/// deterministic in the seed.
pub fn downsample(lc: &LightCurve, n_target: usize, seed: u64) -> Result<LightCurve> {
    let n = lc.len();
    if n_target > n {
        return Err(Error::InvalidTarget {
            requested: n_target,
            available: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = rand::seq::index::sample(&mut rng, n, n_target).into_vec();
    keep.sort_unstable();
    LightCurve::new(
        keep.iter().map(|&i| lc.time[i]).collect(),
        keep.iter().map(|&i| lc.mag[i]).collect(),
        keep.iter().map(|&i| lc.sigma[i]).collect(),
    )
}

/// Outcome of scoring period estimates against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeriodScore {
    pub correct: usize,
    pub total: usize,
}

impl PeriodScore {
    /// Fraction correct; zero when nothing was scored.
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// Count estimates within `tolerance` relative error of the true period.
pub fn score_periods(estimates: &[f64], truths: &[f64], tolerance: f64) -> Result<PeriodScore> {
    if estimates.len() != truths.len() {
        return Err(Error::DimensionMismatch {
            what: "period estimates",
            expected: truths.len(),
            got: estimates.len(),
        });
    }
    let correct = estimates
        .iter()
        .zip(truths.iter())
        .filter(|(est, truth)| ((*est - *truth) / *truth).abs() <= tolerance)
        .count();
    Ok(PeriodScore {
        correct,
        total: truths.len(),
    })
}

/// Read a catalog manifest CSV with header `path,true_period`.
pub fn read_manifest<R: Read>(reader: R) -> Result<Vec<(String, f64)>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.into()))
    };
    let (p_col, t_col) = (col("path")?, col("true_period")?);
    let mut entries = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let period = record[t_col]
            .trim()
            .parse::<f64>()
            .map_err(|_| Error::ParseNumber {
                value: record[t_col].to_string(),
            })?;
        entries.push((record[p_col].to_string(), period));
    }
    Ok(entries)
}

/// Write a periodogram curve as CSV with header `omega,rss`.
pub fn write_periodogram_csv<W: Write>(grid: &[f64], rss: &[f64], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["omega", "rss"])?;
    for (omega, r) in grid.iter().zip(rss.iter()) {
        wtr.write_record(&[format!("{omega}"), format!("{r}")])?;
    }
    wtr.flush()?;
    Ok(())
}

/// One row of the recovery-fraction table (fixed sample size, one fraction per
/// harmonic-count / weighting combination).
#[derive(Debug, Clone)]
pub struct ScoreRow {
    pub n: usize,
    pub cells: Vec<(usize, PeriodWeighting, f64)>,
}

/// Write the recovery table: rows are sample sizes, columns are
/// `k{K}_{weighting}` fractions.
pub fn write_score_csv<W: Write>(rows: &[ScoreRow], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec!["n".to_string()];
    if let Some(first) = rows.first() {
        for (k, weighting, _) in &first.cells {
            header.push(format!("k{}_{}", k, weighting.label()));
        }
    }
    wtr.write_record(&header)?;
    for row in rows {
        let mut record = vec![row.n.to_string()];
        for (_, _, fraction) in &row.cells {
            record.push(format!("{fraction}"));
        }
        wtr.write_record(&record)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Synthetic light-curve generators for testing and benchmark catalogs.
pub mod synthetic {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Baseline magnitude of the generated curves (bright-star scale).
    pub const BASE_MAGNITUDE: f64 = 17.0;

    fn sorted_times(rng: &mut ChaCha8Rng, n: usize, t_span: f64) -> Vec<f64> {
        let mut t: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * t_span).collect();
        t.sort_by(|a, b| a.partial_cmp(b).unwrap());
        t
    }

    /// Pure sinusoid with homoskedastic Gaussian noise and a random phase.
    pub fn sinusoid(
        n: usize,
        t_span: f64,
        period: f64,
        amplitude: f64,
        noise_sigma: f64,
        seed: u64,
    ) -> LightCurve {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let time = sorted_times(&mut rng, n, t_span);
        let phase: f64 = rng.random::<f64>() * 2.0 * std::f64::consts::PI;
        let omega = 2.0 * std::f64::consts::PI / period;
        let mag = time
            .iter()
            .map(|&t| {
                let eps: f64 = StandardNormal.sample(&mut rng);
                BASE_MAGNITUDE + amplitude * (omega * t + phase).sin() + noise_sigma * eps
            })
            .collect();
        LightCurve::new(time, mag, vec![noise_sigma; n]).expect("valid synthetic curve")
    }

    /// Sawtooth light curve: magnitude ramps up slowly over each cycle and
    /// drops sharply (a slow decline in brightness followed by a sudden
    /// brightening), with heteroskedastic noise drawn from `(sigma, prob)`
    /// atoms as in the regression benchmark.
    pub fn sawtooth(
        n: usize,
        t_span: f64,
        period: f64,
        amplitude: f64,
        sigma_atoms: &[(f64, f64)],
        seed: u64,
    ) -> LightCurve {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let time = sorted_times(&mut rng, n, t_span);
        let phase0: f64 = rng.random();
        let mut mag = Vec::with_capacity(n);
        let mut sigma = Vec::with_capacity(n);
        for &t in &time {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut s = sigma_atoms[sigma_atoms.len() - 1].0;
            for &(value, prob) in sigma_atoms {
                acc += prob;
                if u < acc {
                    s = value;
                    break;
                }
            }
            let frac = (t / period + phase0).fract();
            let eps: f64 = StandardNormal.sample(&mut rng);
            mag.push(BASE_MAGNITUDE + amplitude * (frac - 0.5) + s * eps);
            sigma.push(s);
        }
        LightCurve::new(time, mag, sigma).expect("valid synthetic curve")
    }
}
