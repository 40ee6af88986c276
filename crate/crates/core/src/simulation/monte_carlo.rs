//! Replication loop and summary statistics.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::dgp::{calibrate_censoring, generate_with_scale};
use super::scenario::ScenarioConfig;
use crate::error::{Error, Result};
use crate::two_stage::{estimate_with, EstimateOptions, EstimatorKind};
use crate::util::median;

/// Per-estimator summary over the replications that produced an estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSummary {
    pub kind: EstimatorKind,
    /// Median of `estimate - beta_x` (log scale).
    pub median_bias: f64,
    pub mean_bias: f64,
    /// Fraction of Wald intervals containing `beta_x`.
    pub coverage: f64,
    /// Mean log-scale interval width.
    pub mean_ci_width: f64,
    pub n_success: usize,
    /// Replications where the estimator failed; excluded from the statistics above.
    pub nonconvergence_count: usize,
    /// Median selected frailty variance, for frailty estimators.
    pub median_theta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloSummary {
    pub scenario_id: String,
    pub beta_x: f64,
    pub replications: usize,
    pub censor_scale: f64,
    /// Mean realised censored fraction.
    pub censored_fraction: f64,
    pub estimators: Vec<EstimatorSummary>,
}

impl MonteCarloSummary {
    pub fn get(&self, kind: EstimatorKind) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.kind == kind)
    }
}

/// Outcome of one estimator on one replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicationEstimate {
    pub log_hr: f64,
    pub log_ci: (f64, f64),
    pub theta_hat: Option<f64>,
}

/// Raw per-replication results, indexed `[replication][estimator]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationResults {
    pub censored_fraction: Vec<f64>,
    pub estimates: Vec<Vec<Option<ReplicationEstimate>>>,
}

/// RNG for replication `r`: the scenario seed selects the key and `r` the stream.
pub fn replication_rng(seed: u64, r: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64);
    rng
}

pub fn run_replications(
    config: &ScenarioConfig,
    estimators: &[EstimatorKind],
    opts: &EstimateOptions,
) -> Result<ReplicationResults> {
    config.validate()?;
    if estimators.is_empty() {
        return Err(Error::invalid("no estimators requested"));
    }
    let scale = calibrate_censoring(config)?;
    let rows: Vec<(f64, Vec<Option<ReplicationEstimate>>)> = (0..config.replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = replication_rng(config.seed, r);
            let sim = match generate_with_scale(config, scale, &mut rng) {
                Ok(s) => s,
                Err(_) => return (f64::NAN, vec![None; estimators.len()]),
            };
            let n = sim.dataset.len() as f64;
            let cens = (sim.dataset.len() - sim.dataset.n_events()) as f64 / n;
            let est = estimators
                .iter()
                .map(|&k| {
                    estimate_with(&sim.dataset, k, opts).ok().map(|rep| ReplicationEstimate {
                        log_hr: rep.log_hr,
                        log_ci: rep.log_ci,
                        theta_hat: rep.diagnostics.theta_hat,
                    })
                })
                .collect();
            (cens, est)
        })
        .collect();
    let (censored_fraction, estimates) = rows.into_iter().unzip();
    Ok(ReplicationResults {
        censored_fraction,
        estimates,
    })
}

pub fn run_monte_carlo(config: &ScenarioConfig, estimators: &[EstimatorKind]) -> Result<MonteCarloSummary> {
    run_monte_carlo_with(config, estimators, &EstimateOptions::default())
}

/// Runs every replication of `config` in the current rayon pool and
/// summarises each estimator. Results do not depend on the pool size.
pub fn run_monte_carlo_with(
    config: &ScenarioConfig,
    estimators: &[EstimatorKind],
    opts: &EstimateOptions,
) -> Result<MonteCarloSummary> {
    let raw = run_replications(config, estimators, opts)?;
    Ok(summarize(config, estimators, &raw))
}

pub fn summarize(config: &ScenarioConfig, estimators: &[EstimatorKind], raw: &ReplicationResults) -> MonteCarloSummary {
    let truth = config.beta_x;
    let summaries = estimators
        .iter()
        .enumerate()
        .map(|(j, &kind)| {
            let ok: Vec<ReplicationEstimate> = raw.estimates.iter().filter_map(|row| row[j]).collect();
            let m = ok.len();
            let bias: Vec<f64> = ok.iter().map(|e| e.log_hr - truth).collect();
            let (median_bias, mean_bias, coverage, mean_ci_width) = if m == 0 {
                (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
            } else {
                let covered = ok.iter().filter(|e| e.log_ci.0 <= truth && truth <= e.log_ci.1).count();
                (
                    median(&bias),
                    bias.iter().sum::<f64>() / m as f64,
                    covered as f64 / m as f64,
                    ok.iter().map(|e| e.log_ci.1 - e.log_ci.0).sum::<f64>() / m as f64,
                )
            };
            let thetas: Vec<f64> = ok.iter().filter_map(|e| e.theta_hat).collect();
            EstimatorSummary {
                kind,
                median_bias,
                mean_bias,
                coverage,
                mean_ci_width,
                n_success: m,
                nonconvergence_count: raw.estimates.len() - m,
                median_theta: if thetas.is_empty() { None } else { Some(median(&thetas)) },
            }
        })
        .collect();
    let cf: Vec<f64> = raw.censored_fraction.iter().copied().filter(|c| c.is_finite()).collect();
    MonteCarloSummary {
        scenario_id: config.id.clone(),
        beta_x: truth,
        replications: config.replications,
        censor_scale: calibrate_censoring(config).unwrap_or(f64::NAN),
        censored_fraction: if cf.is_empty() { f64::NAN } else { cf.iter().sum::<f64>() / cf.len() as f64 },
        estimators: summaries,
    }
}

pub const RESULTS_HEADER: [&str; 6] = ["scenario_id", "estimator", "median_bias", "coverage", "mean_ci_width", "n_fail"];

/// Writes one CSV row per (scenario, estimator). Numbers use the shortest
/// round-trip representation, so equal summaries give identical bytes.
pub fn write_results<W: Write>(out: W, summaries: &[MonteCarloSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULTS_HEADER)?;
    for s in summaries {
        for e in &s.estimators {
            w.write_record([
                s.scenario_id.clone(),
                e.kind.label(),
                e.median_bias.to_string(),
                e.coverage.to_string(),
                e.mean_ci_width.to_string(),
                e.nonconvergence_count.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
