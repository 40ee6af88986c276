//! Monte Carlo engine: scenario configuration, data generation, censoring
//! calibration and the replication loop.

mod dgp;
mod monte_carlo;
mod scenario;

pub use dgp::{calibrate_censoring, generate_dataset, generate_unmeasured, SimulatedDataset, BASELINE_SCALE, PILOT_DRAWS};
pub use monte_carlo::{
    replication_rng, run_monte_carlo, run_monte_carlo_with, run_replications, summarize, write_results, EstimatorSummary,
    MonteCarloSummary, ReplicationEstimate, ReplicationResults, RESULTS_HEADER,
};
pub use scenario::{default_estimators, parse_scenarios, Exposure, Scenario, ScenarioConfig, UnmeasuredModel};
