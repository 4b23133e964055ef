//! Helpers shared by the integration-test targets.

#![allow(dead_code)] // not every target uses every helper

use std::collections::BTreeMap;
use std::path::PathBuf;

use agentsim::metrics::MetricsReport;
use agentsim::model::{HostId, MsgId, SimTime};
use agentsim::scenario::ValidatedScenario;
use agentsim::trace::{RunTrace, TraceBody};

pub fn scenario(text: &str) -> ValidatedScenario {
    agentsim::parse_scenario(text).expect("test scenario parses")
}

pub fn run(text: &str, seed: u64) -> RunTrace {
    agentsim::run(&scenario(text), seed).expect("test scenario runs")
}

pub fn report(trace: &RunTrace) -> MetricsReport {
    agentsim::compute_metrics(&trace.records).expect("trace is well formed")
}

/// Path of a scenario file shipped in the repository's `scenarios/`
/// directory.
pub fn shipped_scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

pub fn jsonl_bytes(trace: &RunTrace) -> Vec<u8> {
    let mut buf = Vec::new();
    trace.write_jsonl(&mut buf).expect("traces serialize");
    buf
}

/// `(inter, total)` transmission-step counts after `after` ticks.
pub fn transmission_split(trace: &RunTrace, after: SimTime) -> (u64, u64) {
    let mut inter = 0;
    let mut total = 0;
    for record in &trace.records {
        if let TraceBody::Transmission { from, to, .. } = record.body {
            if record.at > after {
                total += 1;
                if from != to {
                    inter += 1;
                }
            }
        }
    }
    (inter, total)
}

/// Transmission-step count per message, dropped steps included.
pub fn legs_per_message(trace: &RunTrace) -> BTreeMap<MsgId, u32> {
    let mut legs = BTreeMap::new();
    for record in &trace.records {
        if let TraceBody::Transmission { msg, .. } = record.body {
            *legs.entry(msg).or_insert(0) += 1;
        }
    }
    legs
}

/// Occupancy sums of every *complete* overload-check sweep (one check
/// per host at a shared boundary tick), keyed by the boundary time.
pub fn boundary_occupancy_sums(trace: &RunTrace, host_count: usize) -> BTreeMap<SimTime, u64> {
    let mut per_boundary: BTreeMap<SimTime, Vec<(HostId, u32)>> = BTreeMap::new();
    for record in &trace.records {
        if let TraceBody::OverloadCheck {
            host, occupancy, ..
        } = record.body
        {
            per_boundary.entry(record.at).or_default().push((host, occupancy));
        }
    }
    per_boundary
        .into_iter()
        .filter(|(_, checks)| checks.len() == host_count)
        .map(|(at, checks)| (at, checks.iter().map(|&(_, occ)| u64::from(occ)).sum()))
        .collect()
}
