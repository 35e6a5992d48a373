//! Scenario configuration, day simulation, metrics and profile ingestion.

pub mod config;
pub mod metrics;
pub mod profile;
pub mod rng;
pub mod scenario;
pub mod sim;

pub use config::Config;
pub use metrics::{compare_runs, weighted_mean, Comparison, RunMetrics, TickRecord};
pub use profile::{campaign_days, Profile, SyntheticDay};
pub use scenario::{ControllerKind, FlowSchedule, PlantKind, Scenario};
pub use sim::{run_scenario, RunOutput};

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Run independent scenarios on a pool of `threads` workers (0 picks the
/// number of cores). Results keep the input order.
pub fn run_campaign(scenarios: &[Scenario], threads: usize) -> Result<Vec<Result<RunOutput>>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| scenarios.par_iter().map(run_scenario).collect()))
}
