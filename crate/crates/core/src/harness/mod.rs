//! Monte Carlo replication of the estimators, summary statistics, table
//! rendering and the command-line front end.

mod cli;
mod tables;

pub use cli::{cli_main, parse_config_text};
pub use tables::{emit_tables, read_summaries_csv, write_summaries_csv, TableFormat};

use rayon::prelude::*;

use crate::dgp::{generate, true_parameter, Design, DesignSpec, Sample};
use crate::error::{Error, Result};
use crate::estimators::{ate_ckt, ate_vy_infeasible, rc_dte, EstimatorKind, RC_EVALUATION_Y};
use crate::nonparametrics::EstimatorConfig;
use crate::rng::substream_seed;

/// Share of failed replications above which a cell is flagged.
pub const UNRELIABLE_FAILURE_SHARE: f64 = 0.10;

/// Environment variable overriding the worker count.
pub const THREADS_ENV: &str = "WSMATCH_THREADS";

/// Monte Carlo summary of one (design, rho, n, estimator) cell. Every
/// statistic is computed on the scaled errors `(estimate - truth) / truth`.
#[derive(Debug, Clone, PartialEq)]
pub struct McSummary {
    pub design: Design,
    pub rho: f64,
    pub n: usize,
    pub estimator: EstimatorKind,
    pub mean_bias: f64,
    pub median_bias: f64,
    pub rmse: f64,
    /// Median of the absolute scaled errors, i.e. deviation about the truth.
    pub mad: f64,
    /// Standard deviation of the scaled errors (divisor `reps - 1`).
    pub sd: f64,
    /// Replications attempted.
    pub reps: usize,
    pub failures: usize,
}

impl McSummary {
    pub fn successes(&self) -> usize {
        self.reps - self.failures
    }

    pub fn unreliable(&self) -> bool {
        self.failures as f64 > UNRELIABLE_FAILURE_SHARE * self.reps as f64
    }

    /// `n Var(estimate)` implied by `sd`, in the units of the estimate.
    pub fn scaled_variance(&self) -> Result<f64> {
        let truth = true_parameter(self.design, self.rho)?;
        Ok(self.n as f64 * (self.sd * truth).powi(2))
    }
}

/// Statistics of the scaled errors. Medians of an even count average the two
/// middle order statistics.
pub fn summarize(
    design: Design,
    rho: f64,
    n: usize,
    estimator: EstimatorKind,
    errors: &[f64],
    failures: usize,
) -> McSummary {
    let k = errors.len();
    let nan_if_empty = |v: f64| if k == 0 { f64::NAN } else { v };
    let mean = errors.iter().sum::<f64>() / k as f64;
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / k as f64).sqrt();
    let sd = if k > 1 {
        (errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt()
    } else {
        f64::NAN
    };
    let abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
    McSummary {
        design,
        rho,
        n,
        estimator,
        mean_bias: nan_if_empty(mean),
        median_bias: nan_if_empty(median(errors)),
        rmse: nan_if_empty(rmse),
        mad: nan_if_empty(median(&abs)),
        sd,
        reps: k + failures,
        failures,
    }
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Runs `estimator` on one sample and returns the point estimate.
pub fn estimate_value(sample: &Sample, estimator: EstimatorKind, config: &EstimatorConfig) -> Result<f64> {
    let spec = &sample.spec;
    let report = match estimator {
        EstimatorKind::CktAte => ate_ckt(sample, config)?,
        EstimatorKind::VyInfeasible => ate_vy_infeasible(sample, spec.design, spec.rho, config)?,
        EstimatorKind::RcDte => rc_dte(sample, config, RC_EVALUATION_Y)?,
        EstimatorKind::CktAteWeighted => {
            return Err(Error::Config(
                "the weighted estimator targets a covariate cell and has no table parameter".into(),
            ))
        }
    };
    if report.value.is_finite() {
        Ok(report.value)
    } else {
        Err(Error::Estimation {
            reason: format!("non-finite estimate {}", report.value),
            n_used: report.n_used,
            n_dropped: report.n_dropped,
        })
    }
}

/// Worker count from [`THREADS_ENV`], or `None` for rayon's default.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(k) if k >= 1 => Ok(Some(k)),
            _ => Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(None),
    }
}

/// [`run_cell_with`] under the default configuration and the worker count
/// from the environment.
pub fn run_cell(
    design: Design,
    rho: f64,
    n: usize,
    estimator: EstimatorKind,
    reps: usize,
    master_seed: u64,
) -> Result<McSummary> {
    run_cell_with(design, rho, n, estimator, reps, master_seed, &EstimatorConfig::default(), threads_from_env()?)
}

/// Replication `r` draws its sample from `substream_seed(master_seed, design,
/// rho, n, r)`; failed replications are counted and left out. Errors are
/// collected in replication order, so the summary does not depend on the
/// number of worker threads.
#[allow(clippy::too_many_arguments)]
pub fn run_cell_with(
    design: Design,
    rho: f64,
    n: usize,
    estimator: EstimatorKind,
    reps: usize,
    master_seed: u64,
    config: &EstimatorConfig,
    threads: Option<usize>,
) -> Result<McSummary> {
    if reps == 0 {
        return Err(Error::Config("reps must be at least 1".into()));
    }
    config.validate()?;
    let truth = true_parameter(design, rho)?;
    DesignSpec::new(design, rho, n, master_seed).validate()?;
    if estimator == EstimatorKind::RcDte && design != Design::Rc {
        return Err(Error::Config(format!("{estimator} applies to the RC design only, not {design}")));
    }
    let one = |r: usize| -> Option<f64> {
        let spec = DesignSpec::new(design, rho, n, substream_seed(master_seed, design, rho, n, r as u64));
        let sample = generate(&spec).ok()?;
        estimate_value(&sample, estimator, config).ok().map(|v| (v - truth) / truth)
    };
    let outcomes: Vec<Option<f64>> = match threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {k} worker threads: {e}")))?
            .install(|| (0..reps).into_par_iter().map(one).collect()),
        None => (0..reps).into_par_iter().map(one).collect(),
    };
    let errors: Vec<f64> = outcomes.iter().flatten().copied().collect();
    let failures = reps - errors.len();
    Ok(summarize(design, rho, n, estimator, &errors, failures))
}
