//! Subcommand implementations.

use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use hetwls::estimators::{self, RegressionData};
use hetwls::periodfit::{self, LightCurve, PeriodogramConfig, ScoreRow};
use hetwls::simulation::{self, VarianceEstimator};

use crate::config::{
    load_json, resolve, CatalogShape, FitConfig, PeriodogramCmdConfig, ScoreConfig, SimulateConfig,
};
use crate::{CliError, CommonArgs};

fn from_library(e: hetwls::Error) -> CliError {
    use hetwls::Error::*;
    match e {
        SingularDesign(_) | SingularCovariance | AllFrequenciesSingular => {
            CliError::Computation(e.to_string())
        }
        Io(inner) => CliError::Io(inner.to_string()),
        other => CliError::Config(other.to_string()),
    }
}

/// Write a file through a temporary sibling and an atomic rename, so failures
/// never leave a partial file behind.
fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| CliError::Io(format!("cannot create temp file in {}: {e}", dir.display())))?;
    tmp.write_all(bytes)
        .map_err(|e| CliError::Io(format!("write failed: {e}")))?;
    let target = dir.join(name);
    tmp.persist(&target)
        .map_err(|e| CliError::Io(format!("cannot persist {}: {e}", target.display())))?;
    Ok(())
}

fn quantity_rows(rows: &[(String, String, f64)]) -> Result<Vec<u8>, CliError> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["quantity", "index", "value"])
        .map_err(|e| CliError::Io(e.to_string()))?;
    for (quantity, index, value) in rows {
        wtr.write_record(&[quantity.clone(), index.clone(), format!("{value}")])
            .map_err(|e| CliError::Io(e.to_string()))?;
    }
    wtr.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

pub fn run_fit(args: &CommonArgs) -> Result<(), CliError> {
    let config: FitConfig = load_json(&args.config)?;
    let data_path = resolve(&args.config, &config.data);
    let data = RegressionData::from_csv_path(&data_path).map_err(from_library)?;
    if args.verbose > 0 {
        eprintln!(
            "fit: {} observations, {} covariates, strategy {}",
            data.n(),
            data.dim(),
            config.strategy.label()
        );
    }
    let fitted = estimators::fit(&data, &config.strategy, config.gamma).map_err(from_library)?;

    let covariance = match config.variance {
        VarianceEstimator::Sandwich => fitted
            .covariance
            .clone()
            .expect("fit always attaches the sandwich covariance"),
        VarianceEstimator::PlugIn => {
            // Plug-in covariance with the misspecification matrix estimated
            // by the adaptive procedure.
            let est = estimators::estimate_misspec(&data, config.gamma).map_err(from_library)?;
            estimators::plugin_covariance(&data, &est.misspec, &est.design_inverse, &fitted.weights)
                .map_err(from_library)?
        }
        VarianceEstimator::Oracle => {
            return Err(CliError::Config(
                "the oracle covariance needs a simulation truth; use nu1 or nu2".into(),
            ))
        }
    };

    let mut rows: Vec<(String, String, f64)> = Vec::new();
    for j in 0..fitted.beta.len() {
        rows.push(("beta".into(), (j + 1).to_string(), fitted.beta[j]));
    }
    if let Some(delta) = fitted.delta {
        rows.push(("delta".into(), String::new(), delta));
    }
    for i in 0..fitted.weights.len() {
        rows.push(("weight".into(), (i + 1).to_string(), fitted.weights[i]));
    }
    write_atomic(&args.out, "fit.csv", &quantity_rows(&rows)?)?;

    let p = covariance.nrows();
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let header: Vec<String> = (1..=p).map(|j| format!("c{j}")).collect();
    wtr.write_record(&header)
        .map_err(|e| CliError::Io(e.to_string()))?;
    for i in 0..p {
        let row: Vec<String> = (0..p).map(|j| format!("{}", covariance[(i, j)])).collect();
        wtr.write_record(&row)
            .map_err(|e| CliError::Io(e.to_string()))?;
    }
    let bytes = wtr.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    write_atomic(&args.out, "cov.csv", &bytes)?;
    Ok(())
}

pub fn run_simulate(args: &CommonArgs) -> Result<(), CliError> {
    let mut config: SimulateConfig = load_json(&args.config)?;
    if let Some(seed) = args.seed {
        config.dgp.seed = seed;
    }
    if config.strategies.is_empty() {
        return Err(CliError::Config("no strategies configured".into()));
    }
    if args.verbose > 0 {
        eprintln!(
            "simulate: n={}, replicates={}, seed={}, {} strategies",
            config.dgp.n,
            config.dgp.replicates,
            config.dgp.seed,
            config.strategies.len()
        );
    }
    let report = simulation::run_monte_carlo(
        &config.dgp,
        &config.strategies,
        &config.variance_estimators,
        config.gamma,
    )
    .map_err(from_library)?;

    let total_failures: usize = report.strategies.iter().map(|s| s.failures).sum();
    if total_failures > 0 {
        eprintln!("warning: {total_failures} replicate fits failed and were excluded");
    }
    if args.verbose > 0 {
        for strat in &report.strategies {
            eprintln!(
                "  {}: {} replicates, {:.2?} fit time",
                strat.strategy.label(),
                strat.outcomes.len(),
                strat.runtime
            );
        }
    }

    let mut replicates = Vec::new();
    simulation::write_replicates_csv(&report, &mut replicates).map_err(from_library)?;
    write_atomic(&args.out, "replicates.csv", &replicates)?;
    let mut summary = Vec::new();
    simulation::write_summary_csv(&report, &mut summary).map_err(from_library)?;
    write_atomic(&args.out, "summary.csv", &summary)?;
    let mut ellipses = Vec::new();
    simulation::write_ellipses_csv(&report, &mut ellipses).map_err(from_library)?;
    write_atomic(&args.out, "ellipses.csv", &ellipses)?;
    Ok(())
}

pub fn run_periodogram(args: &CommonArgs) -> Result<(), CliError> {
    let config: PeriodogramCmdConfig = load_json(&args.config)?;
    let curve_path = resolve(&args.config, &config.curve);
    let lc = LightCurve::from_csv_path(&curve_path).map_err(from_library)?;
    if lc.time_span() <= 0.0 {
        return Err(CliError::Config("light curve has zero time span".into()));
    }
    let grid = periodfit::omega_grid(lc.time_span(), config.period_range, config.oversample);
    if args.verbose > 0 {
        eprintln!(
            "periodogram: {} points, span {:.3} d, grid {} frequencies, weighting {}",
            lc.len(),
            lc.time_span(),
            grid.len(),
            config.weighting.label()
        );
    }
    let mut pg_config = PeriodogramConfig::new(config.harmonics, grid.clone(), config.weighting);
    pg_config.gamma = config.gamma;
    let result = periodfit::periodogram(&lc, &pg_config).map_err(from_library)?;

    let mut curve_csv = Vec::new();
    periodfit::write_periodogram_csv(&grid, &result.rss, &mut curve_csv).map_err(from_library)?;
    write_atomic(&args.out, "periodogram.csv", &curve_csv)?;

    let mut rows: Vec<(String, String, f64)> = vec![
        ("omega".into(), String::new(), result.omega),
        ("period".into(), String::new(), result.period()),
    ];
    if let Some(delta) = result.delta {
        rows.push(("delta".into(), String::new(), delta));
    }
    for j in 0..result.coefficients.len() {
        rows.push(("beta".into(), (j + 1).to_string(), result.coefficients[j]));
    }
    for (k, (a, phi)) in result
        .amplitudes
        .iter()
        .zip(result.phases.iter())
        .enumerate()
    {
        rows.push(("amplitude".into(), (k + 1).to_string(), *a));
        rows.push(("phase".into(), (k + 1).to_string(), *phi));
    }
    write_atomic(&args.out, "period_fit.csv", &quantity_rows(&rows)?)?;
    Ok(())
}

pub fn run_score(args: &CommonArgs) -> Result<(), CliError> {
    let mut config: ScoreConfig = load_json(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if config.sample_sizes.is_empty() || config.weightings.is_empty() || config.harmonics.is_empty()
    {
        return Err(CliError::Config(
            "sample_sizes, harmonics, and weightings must be non-empty".into(),
        ));
    }

    // Assemble the catalog: user-supplied manifest or generated curves.
    let catalog: Vec<(LightCurve, f64)> = if let Some(manifest) = &config.catalog {
        let manifest_path = resolve(&args.config, manifest);
        let file = std::fs::File::open(&manifest_path)
            .map_err(|e| CliError::Config(format!("cannot open manifest: {e}")))?;
        let entries = periodfit::read_manifest(file).map_err(from_library)?;
        let mut curves = Vec::with_capacity(entries.len());
        for (path, period) in entries {
            let curve_path = resolve(&manifest_path, Path::new(&path));
            let lc = LightCurve::from_csv_path(&curve_path).map_err(from_library)?;
            curves.push((lc, period));
        }
        curves
    } else if let Some(synthetic) = &config.synthetic {
        let mut master = ChaCha8Rng::seed_from_u64(config.seed);
        (0..synthetic.curves)
            .map(|_| {
                let period = master.random_range(synthetic.periods.0..synthetic.periods.1);
                let gen_seed: u64 = master.random();
                let lc = match synthetic.shape {
                    CatalogShape::Sawtooth => periodfit::synthetic::sawtooth(
                        synthetic.base_points,
                        synthetic.t_span,
                        period,
                        synthetic.amplitude,
                        &synthetic.sigma_law,
                        gen_seed,
                    ),
                    CatalogShape::Sinusoid => periodfit::synthetic::sinusoid(
                        synthetic.base_points,
                        synthetic.t_span,
                        period,
                        synthetic.amplitude,
                        synthetic.noise_sigma,
                        gen_seed,
                    ),
                };
                (lc, period)
            })
            .collect()
    } else {
        return Err(CliError::Config(
            "score needs either a catalog manifest or a synthetic block".into(),
        ));
    };

    if catalog.is_empty() {
        eprintln!("warning: empty catalog, writing zero-row results");
        let rows: Vec<ScoreRow> = Vec::new();
        let mut buf = Vec::new();
        periodfit::write_score_csv(&rows, &mut buf).map_err(from_library)?;
        write_atomic(&args.out, "results.csv", &buf)?;
        return Ok(());
    }

    // Pre-draw downsampling seeds so parallel evaluation stays deterministic.
    let mut seed_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let down_seeds: Vec<Vec<u64>> = (0..catalog.len())
        .map(|_| {
            (0..config.sample_sizes.len())
                .map(|_| seed_rng.random())
                .collect()
        })
        .collect();

    let mut rows = Vec::with_capacity(config.sample_sizes.len());
    let mut skipped_total = 0usize;
    for (n_idx, &n_target) in config.sample_sizes.iter().enumerate() {
        // estimates[curve][cell] = Some(period estimate)
        let estimates: Vec<Vec<Option<f64>>> = catalog
            .par_iter()
            .enumerate()
            .map(|(c_idx, (lc, _))| {
                let mut per_cell = Vec::new();
                let sub = match periodfit::downsample(lc, n_target, down_seeds[c_idx][n_idx]) {
                    Ok(s) => s,
                    Err(_) => {
                        per_cell.resize(config.harmonics.len() * config.weightings.len(), None);
                        return per_cell;
                    }
                };
                let span = sub.time_span();
                for &k in &config.harmonics {
                    for &weighting in &config.weightings {
                        let estimate = if span > 0.0 {
                            let grid =
                                periodfit::omega_grid(span, config.period_range, config.oversample);
                            let mut pg = PeriodogramConfig::new(k, grid, weighting);
                            pg.gamma = config.gamma;
                            periodfit::periodogram(&sub, &pg).ok().map(|r| r.period())
                        } else {
                            None
                        };
                        per_cell.push(estimate);
                    }
                }
                per_cell
            })
            .collect();

        let mut cells = Vec::new();
        let mut cell_idx = 0usize;
        for &k in &config.harmonics {
            for &weighting in &config.weightings {
                let mut correct = 0usize;
                let mut total = 0usize;
                for (c_idx, per_cell) in estimates.iter().enumerate() {
                    match per_cell.get(cell_idx).copied().flatten() {
                        Some(estimate) => {
                            total += 1;
                            let truth = catalog[c_idx].1;
                            if ((estimate - truth) / truth).abs() <= config.tolerance {
                                correct += 1;
                            }
                        }
                        None => skipped_total += 1,
                    }
                }
                let fraction = if total == 0 {
                    0.0
                } else {
                    correct as f64 / total as f64
                };
                cells.push((k, weighting, fraction));
                cell_idx += 1;
            }
        }
        if args.verbose > 0 {
            eprintln!("score: n={n_target} done ({} curves)", catalog.len());
        }
        rows.push(ScoreRow { n: n_target, cells });
    }
    if skipped_total > 0 {
        eprintln!(
            "warning: {skipped_total} curve evaluations skipped (too few points or singular fits)"
        );
    }

    let mut buf = Vec::new();
    periodfit::write_score_csv(&rows, &mut buf).map_err(from_library)?;
    write_atomic(&args.out, "results.csv", &buf)?;
    Ok(())
}
