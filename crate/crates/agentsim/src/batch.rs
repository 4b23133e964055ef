//! Evaluate one scenario across many seeds.
//!
//! Individual runs are inherently sequential (a strict event order is
//! the whole point), but runs are independent of each other, so a seed
//! sweep is data-parallel. With the `parallel` feature (default) the
//! sweep fans out over a work-stealing thread pool; without it the
//! same API runs the seeds one after another. Results come back in
//! seed order either way, and are identical either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::engine::{run, EngineError};
use crate::metrics::{compute_metrics, MetricsReport};
use crate::scenario::ValidatedScenario;

/// One run, folded straight into its report.
pub fn run_report(
    scenario: &ValidatedScenario,
    seed: u64,
) -> Result<MetricsReport, EngineError> {
    let trace = run(scenario, seed)?;
    compute_metrics(&trace.records)
        .map_err(|e| EngineError::Internal(format!("engine produced a malformed trace: {e}")))
}

/// Sequential seed sweep. Always available; the reference order for
/// the parallel version.
pub fn run_reports_seq(
    scenario: &ValidatedScenario,
    seeds: &[u64],
) -> Vec<Result<MetricsReport, EngineError>> {
    seeds.iter().map(|&seed| run_report(scenario, seed)).collect()
}

/// Seed sweep across the thread pool. Output order follows `seeds`.
#[cfg(feature = "parallel")]
pub fn run_reports(
    scenario: &ValidatedScenario,
    seeds: &[u64],
) -> Vec<Result<MetricsReport, EngineError>> {
    seeds
        .par_iter()
        .map(|&seed| run_report(scenario, seed))
        .collect()
}

/// Sequential stand-in so callers compile with either feature set.
#[cfg(not(feature = "parallel"))]
pub fn run_reports(
    scenario: &ValidatedScenario,
    seeds: &[u64],
) -> Vec<Result<MetricsReport, EngineError>> {
    run_reports_seq(scenario, seeds)
}
