//! Monte Carlo consistency checks: the estimated misspecification quantities
//! converge to their quadrature-oracle counterparts on the quadratic
//! benchmark, and fits behave as the asymptotic theory predicts.

use nalgebra::{DMatrix, DVector};

use hetwls::estimators::{self, GammaFunctional, RegressionData, WeightStrategy};
use hetwls::quadrature;
use hetwls::simulation::{self, DgpConfig, RegressionFn};

fn quadratic_oracle() -> simulation::OracleQuantities {
    let config = DgpConfig::quadratic_discrete(100, 1, 0);
    simulation::oracle_quantities(&config, GammaFunctional::Trace).unwrap()
}

#[test]
fn design_inverse_converges_to_oracle() {
    let config = DgpConfig::quadratic_discrete(100_000, 1, 2024);
    let data = simulation::generate_dataset(&config, 0).unwrap();
    let b = estimators::design_inverse(&data).unwrap();
    let expected = DMatrix::from_row_slice(2, 2, &[4.0, -6.0, -6.0, 12.0]);
    for j in 0..2 {
        for k in 0..2 {
            let rel = (b[(j, k)] - expected[(j, k)]).abs() / expected[(j, k)].abs();
            assert!(
                rel < 0.05,
                "entry ({j},{k}): {} vs {}",
                b[(j, k)],
                expected[(j, k)]
            );
        }
    }
}

#[test]
fn weighted_nonlinearity_mean_recovers_mass() {
    // The sigma^-4 weighted average of the squared-nonlinearity estimates
    // recovers E[g^2] = 1/180 at the true coefficients.
    let oracle = quadratic_oracle();
    let config = DgpConfig::quadratic_discrete(100_000, 1, 7);
    let data = simulation::generate_dataset(&config, 0).unwrap();
    let g2 = estimators::squared_nonlinearity(&data, &oracle.beta).unwrap();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..data.n() {
        let s = data.sigma()[i];
        let w4 = 1.0 / (s * s * s * s);
        num += g2[i] * w4;
        den += w4;
    }
    let mass = num / den;
    let expected = 1.0 / 180.0;
    assert!(
        (mass - expected).abs() / expected < 0.10,
        "weighted mean {mass} vs {expected}"
    );
}

#[test]
fn misspec_matrix_vanishes_for_linear_truth() {
    let config = DgpConfig {
        regression_fn: RegressionFn::Linear(vec![-1.0 / 6.0, 1.0]),
        ..DgpConfig::quadratic_discrete(10_000, 1, 31)
    };
    let data = simulation::generate_dataset(&config, 0).unwrap();
    let b = estimators::design_inverse(&data).unwrap();
    let beta = estimators::solve_weighted(&data, &DVector::from_element(10_000, 1.0)).unwrap();
    let a = estimators::misspec_matrix(&data, &beta, &b).unwrap();
    assert!(a.abs().max() < 0.05, "max entry {}", a.abs().max());
}

#[test]
fn misspec_matrix_converges_to_oracle() {
    let oracle = quadratic_oracle();
    let config = DgpConfig::quadratic_discrete(100_000, 1, 55);
    let data = simulation::generate_dataset(&config, 0).unwrap();
    let b = estimators::design_inverse(&data).unwrap();
    let beta = estimators::solve_weighted(&data, &DVector::from_element(100_000, 1.0)).unwrap();
    let a = estimators::misspec_matrix(&data, &beta, &b).unwrap();
    for j in 0..2 {
        for k in 0..2 {
            let rel = (a[(j, k)] - oracle.misspec[(j, k)]).abs() / oracle.misspec[(j, k)].abs();
            assert!(
                rel < 0.15,
                "entry ({j},{k}): {} vs {}",
                a[(j, k)],
                oracle.misspec[(j, k)]
            );
        }
    }
}

#[test]
fn estimated_shift_is_consistent() {
    let oracle = quadratic_oracle();
    let config = DgpConfig::quadratic_discrete(100_000, 1, 56);
    let data = simulation::generate_dataset(&config, 0).unwrap();
    let b = estimators::design_inverse(&data).unwrap();
    let beta = estimators::solve_weighted(&data, &DVector::from_element(100_000, 1.0)).unwrap();
    let a = estimators::misspec_matrix(&data, &beta, &b).unwrap();
    let delta = estimators::optimal_delta(&a, &b, GammaFunctional::Trace).unwrap();
    assert!(
        (delta - oracle.delta).abs() / oracle.delta < 0.15,
        "delta {delta} vs oracle {}",
        oracle.delta
    );
}

#[test]
fn group_moments_converge_to_oracle() {
    // C_m -> E[(g^2(x) + sigma_m^2) x x^T], with the g^2 part integrated by
    // quadrature at the oracle coefficients.
    let oracle = quadratic_oracle();
    let b0 = oracle.beta[0];
    let b1 = oracle.beta[1];
    let g2 = move |x: f64| {
        let g = x * x - b0 - b1 * x;
        g * g
    };
    let tol = 1e-10;
    let eg2 = [
        quadrature::integrate(g2, 0.0, 1.0, tol).unwrap(),
        quadrature::integrate(|x| g2(x) * x, 0.0, 1.0, tol).unwrap(),
        quadrature::integrate(|x| g2(x) * x * x, 0.0, 1.0, tol).unwrap(),
    ];
    let exx = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0 / 3.0]);

    let config = DgpConfig::quadratic_discrete(100_000, 1, 77);
    let data = simulation::generate_dataset(&config, 0).unwrap();
    let beta = estimators::solve_weighted(&data, &DVector::from_element(100_000, 1.0)).unwrap();
    let moments = estimators::group_moments(&data, &beta).unwrap();
    let sigmas = [0.01, 0.1, 1.0];
    assert_eq!(moments.len(), 3);
    for (m, c) in moments.iter().enumerate() {
        // E[(g^2 + s^2) x x^T] = [integrals of g^2 * (1, x, x^2)] + s^2 E[x x^T]
        let s2 = sigmas[m] * sigmas[m];
        let expected = DMatrix::from_row_slice(
            2,
            2,
            &[
                eg2[0] + s2 * exx[(0, 0)],
                eg2[1] + s2 * exx[(0, 1)],
                eg2[1] + s2 * exx[(1, 0)],
                eg2[2] + s2 * exx[(1, 1)],
            ],
        );
        for j in 0..2 {
            for k in 0..2 {
                let rel = (c[(j, k)] - expected[(j, k)]).abs() / expected[(j, k)].abs();
                assert!(
                    rel < 0.15,
                    "group {m} entry ({j},{k}): {} vs {}",
                    c[(j, k)],
                    expected[(j, k)]
                );
            }
        }
    }
}

#[test]
fn grouped_weights_recover_inverse_variance_for_linear_truth() {
    // With g == 0 the grouped optimal weights are proportional to sigma_m^-2,
    // so w(m) * sigma_m^2 is constant across groups.
    let config = DgpConfig {
        regression_fn: RegressionFn::Linear(vec![0.3, 2.0]),
        ..DgpConfig::quadratic_discrete(100_000, 1, 404)
    };
    let data = simulation::generate_dataset(&config, 0).unwrap();
    let fitted = estimators::fit(
        &data,
        &WeightStrategy::adaptive_grouped(),
        GammaFunctional::Trace,
    )
    .unwrap();
    let groups = data.groups().unwrap();
    let mut scaled = [f64::NAN; 3];
    for i in 0..data.n() {
        let s = data.sigma()[i];
        scaled[groups[i] - 1] = fitted.weights[i] * s * s;
    }
    let max = scaled.iter().cloned().fold(f64::MIN, f64::max);
    let min = scaled.iter().cloned().fold(f64::MAX, f64::min);
    assert!(
        max / min - 1.0 < 0.05,
        "scaled weights not proportional: {scaled:?}"
    );
}

#[test]
fn two_identically_distributed_groups_get_equal_weights() {
    // Constant sigma with arbitrary half/half group labels: both group
    // moments estimate the same expectation, so the weights agree within
    // Monte Carlo error.
    let config = DgpConfig {
        sigma_law: simulation::SigmaLaw::Discrete(vec![(0.1, 1.0)]),
        ..DgpConfig::quadratic_discrete(20_000, 1, 9)
    };
    let base = simulation::generate_dataset(&config, 0).unwrap();
    let labels: Vec<usize> = (0..base.n()).map(|i| 1 + (i % 2)).collect();
    let data = RegressionData::new(
        base.design().clone(),
        base.response().clone(),
        base.sigma().clone(),
        Some(labels),
    )
    .unwrap();
    let fitted = estimators::fit(
        &data,
        &WeightStrategy::adaptive_grouped(),
        GammaFunctional::Trace,
    )
    .unwrap();
    let w1 = fitted.weights[0];
    let w2 = fitted.weights[1];
    assert!(
        (w1 / w2 - 1.0).abs() < 0.10,
        "group weights differ: {w1} vs {w2}"
    );
}

#[test]
fn all_strategies_center_on_truth() {
    // Over replicates, each strategy's mean estimate is within three Monte
    // Carlo standard errors of the target. The sample size must be large
    // enough that the O(1/n) bias of the weighted projection of a nonlinear
    // function is below Monte Carlo resolution; at n = 100 the
    // inverse-variance mean sits ~5 standard errors off (its effective sample
    // is the handful of tiny-sigma points), so the check runs at n = 1000.
    let oracle = quadratic_oracle();
    let config = DgpConfig::quadratic_discrete(1000, 1000, 1234);
    let strategies = [
        WeightStrategy::InverseVariance,
        WeightStrategy::Identity,
        WeightStrategy::adaptive_known(),
        WeightStrategy::adaptive_grouped(),
    ];
    let report = simulation::run_monte_carlo(
        &config,
        &strategies,
        &[simulation::VarianceEstimator::Sandwich],
        GammaFunctional::Trace,
    )
    .unwrap();
    for strat in &report.strategies {
        let k = strat.outcomes.len() as f64;
        for j in 0..2 {
            let se = (strat.covariance[(j, j)] / k).sqrt();
            let dev = (strat.mean[j] - oracle.beta[j]).abs();
            assert!(
                dev <= 3.0 * se,
                "{}: coordinate {j} off by {dev} (3 SE = {})",
                strat.strategy.label(),
                3.0 * se
            );
        }
    }
}

#[test]
fn estimates_tighten_with_sample_size() {
    // Root-n behavior: the median error norm at n = 10^4 sits below the
    // median at n = 10^2, for every strategy.
    let oracle = quadratic_oracle();
    let strategies = [
        WeightStrategy::InverseVariance,
        WeightStrategy::Identity,
        WeightStrategy::adaptive_known(),
        WeightStrategy::adaptive_grouped(),
    ];
    let median_error = |n: usize, strategy: &WeightStrategy| -> f64 {
        let config = DgpConfig::quadratic_discrete(n, 200, 88);
        let report = simulation::run_monte_carlo(
            &config,
            std::slice::from_ref(strategy),
            &[],
            GammaFunctional::Trace,
        )
        .unwrap();
        let mut errs: Vec<f64> = report.strategies[0]
            .outcomes
            .iter()
            .map(|o| (o.beta.clone() - oracle.beta.clone()).norm())
            .collect();
        errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        errs[errs.len() / 2]
    };
    for strategy in &strategies {
        let small = median_error(100, strategy);
        let large = median_error(10_000, strategy);
        assert!(
            large < small,
            "{}: median error grew from {small} to {large}",
            strategy.label()
        );
    }
}

#[test]
fn ols_estimates_look_gaussian_at_large_n() {
    // Shape check on standardized replicate coordinates.
    let config = DgpConfig::quadratic_discrete(1000, 2000, 321);
    let report = simulation::run_monte_carlo(
        &config,
        &[WeightStrategy::Identity],
        &[],
        GammaFunctional::Trace,
    )
    .unwrap();
    let strat = &report.strategies[0];
    let k = strat.outcomes.len() as f64;
    for j in 0..2 {
        let mean = strat.mean[j];
        let sd = strat.covariance[(j, j)].sqrt();
        let mut m3 = 0.0;
        let mut m4 = 0.0;
        for o in &strat.outcomes {
            let z = (o.beta[j] - mean) / sd;
            m3 += z.powi(3);
            m4 += z.powi(4);
        }
        let skew = m3 / k;
        let exkurt = m4 / k - 3.0;
        assert!(skew.abs() < 0.25, "skew {skew}");
        assert!(exkurt.abs() < 0.5, "excess kurtosis {exkurt}");
    }
}

#[test]
fn oracle_coverage_dominates_plugin_for_weighted_fits() {
    // With inverse-variance weights the plug-in covariance is strongly
    // anti-conservative while the oracle is close to nominal, so oracle
    // coverage sits far above plug-in coverage.
    let config = DgpConfig::quadratic_discrete(100, 1000, 17_017);
    let report = simulation::run_monte_carlo(
        &config,
        &[WeightStrategy::InverseVariance],
        &[
            simulation::VarianceEstimator::PlugIn,
            simulation::VarianceEstimator::Oracle,
        ],
        GammaFunctional::Trace,
    )
    .unwrap();
    let coverage = &report.strategies[0].coverage;
    assert!(
        coverage[1] >= coverage[0],
        "oracle {} vs plug-in {}",
        coverage[1],
        coverage[0]
    );
}

#[test]
fn dependent_errors_bias_weighted_fits_only() {
    let oracle_dep = simulation::oracle_quantities(
        &DgpConfig::quadratic_dependent(100, 1, 0),
        GammaFunctional::Trace,
    )
    .unwrap();
    let bias_gap = oracle_dep.wls_limit.clone() - oracle_dep.beta.clone();

    let run = |n: usize, strategy: WeightStrategy| -> DVector<f64> {
        let config = DgpConfig::quadratic_dependent(n, 300, 5150);
        let report =
            simulation::run_monte_carlo(&config, &[strategy], &[], GammaFunctional::Trace).unwrap();
        report.strategies[0].mean.clone()
    };

    // OLS bias shrinks by an order of magnitude from n = 100 to n = 10000.
    let ols_small = (run(100, WeightStrategy::Identity) - oracle_dep.beta.clone()).norm();
    let ols_large = (run(10_000, WeightStrategy::Identity) - oracle_dep.beta.clone()).norm();
    assert!(
        ols_large < ols_small,
        "OLS bias did not shrink: {ols_small} -> {ols_large}"
    );
    assert!(ols_large < 0.01, "OLS bias at large n: {ols_large}");

    // WLS bias stays at the asymptotic gap (within 10% of it, per coordinate).
    for n in [100usize, 10_000] {
        let wls_bias = run(n, WeightStrategy::InverseVariance) - oracle_dep.beta.clone();
        for j in 0..2 {
            let rel = (wls_bias[j] - bias_gap[j]).abs() / bias_gap[j].abs();
            assert!(
                rel < 0.10,
                "n={n} coordinate {j}: bias {} vs asymptotic {}",
                wls_bias[j],
                bias_gap[j]
            );
        }
    }
}
