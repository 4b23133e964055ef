//! Post-run analysis: fold a record trace into a metrics report, and
//! compare two reports.
//!
//! Reports are pure functions of the records, so a report computed
//! from an in-memory trace and one computed after a JSONL round trip
//! are identical.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::intermediary::LossReason;
use crate::model::{HostId, Mediation, MsgId, SimTime};
use crate::trace::{TraceBody, TraceRecord, SCHEMA_VERSION};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("malformed trace: {0}")]
    MalformedTrace(String),
}

fn malformed(msg: impl Into<String>) -> MetricsError {
    MetricsError::MalformedTrace(msg.into())
}

/// Everything worth knowing about one run, derived from its trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub horizon: u64,
    pub window: u64,

    // -- message accounting ------------------------------------------------
    pub sends: u64,
    pub delivered: u64,
    pub lost: u64,
    pub no_match: u64,
    /// Envelopes still traveling when the run ended.
    pub in_flight: u64,
    pub losses_by_reason: BTreeMap<LossReason, u64>,

    // -- traffic -----------------------------------------------------------
    /// Transmission steps that crossed a host boundary (dropped ones
    /// included: they occupied the network).
    pub inter_host_transmissions: u64,
    /// Transmission steps that stayed on one host.
    pub intra_host_transmissions: u64,
    /// Share of transmission steps that crossed hosts.
    pub inter_host_ratio: Option<f64>,
    /// Total payload carried across host boundaries.
    pub network_load: u64,

    // -- mechanism activity --------------------------------------------------
    pub migrations: u64,
    pub proposals: u64,
    pub polls: u64,
    pub aborted_migrations: u64,

    // -- delivery quality ----------------------------------------------------
    pub mean_delivery_latency: Option<f64>,
    /// Per mediation mode: how many transmission steps delivered
    /// messages took, and how often. `{broker: {2: 17}}` means every
    /// one of 17 delivered broker messages took exactly two steps.
    pub hop_histogram: BTreeMap<Mediation, BTreeMap<u32, u64>>,

    // -- occupancy ------------------------------------------------------------
    /// `(at, occupancy)` samples per host, one per overload check.
    pub occupancy_series: BTreeMap<HostId, Vec<(SimTime, u32)>>,
    /// Occupancy at each host's last overload check.
    pub final_occupancy: BTreeMap<HostId, u32>,
}

/// Fold a trace into a report, validating its structure on the way:
/// records must be `(at, seq)`-ordered behind a leading header, every
/// message record must follow that message's send, and each message
/// terminates at most once.
pub fn compute_metrics(records: &[TraceRecord]) -> Result<MetricsReport, MetricsError> {
    let first = records.first().ok_or_else(|| malformed("empty trace"))?;
    let (window, horizon) = match first.body {
        TraceBody::Header {
            schema_version,
            window,
            horizon,
            ..
        } => {
            if schema_version != SCHEMA_VERSION {
                return Err(malformed(format!(
                    "schema version {schema_version} (this build reads {SCHEMA_VERSION})"
                )));
            }
            (window, horizon)
        }
        _ => return Err(malformed("first record is not a header")),
    };

    let mut sends: BTreeMap<MsgId, Mediation> = BTreeMap::new();
    let mut terminated: BTreeSet<MsgId> = BTreeSet::new();
    let mut transmissions: BTreeMap<MsgId, u32> = BTreeMap::new();
    let mut losses_by_reason: BTreeMap<LossReason, u64> = BTreeMap::new();
    let mut delivered_msgs: Vec<(MsgId, SimTime, SimTime)> = Vec::new();
    let mut no_match = 0u64;
    let mut inter = 0u64;
    let mut intra = 0u64;
    let mut network_load = 0u64;
    let mut migrations = 0u64;
    let mut proposals = 0u64;
    let mut polls = 0u64;
    let mut aborted = 0u64;
    let mut occupancy_series: BTreeMap<HostId, Vec<(SimTime, u32)>> = BTreeMap::new();

    let known = |msg: MsgId, sends: &BTreeMap<MsgId, Mediation>, what: &str| {
        if sends.contains_key(&msg) {
            Ok(())
        } else {
            Err(malformed(format!("{what} for {msg} precedes its send")))
        }
    };
    let mut prev = (first.at, first.seq);
    for record in &records[1..] {
        if (record.at, record.seq) < prev {
            return Err(malformed(format!(
                "records out of order at ({}, {})",
                record.at, record.seq
            )));
        }
        prev = (record.at, record.seq);
        match &record.body {
            TraceBody::Header { .. } => {
                return Err(malformed("second header"));
            }
            TraceBody::Send { msg, mediation, .. } => {
                if sends.insert(*msg, *mediation).is_some() {
                    return Err(malformed(format!("{msg} sent twice")));
                }
            }
            TraceBody::Transmission {
                msg,
                from,
                to,
                payload,
                ..
            } => {
                known(*msg, &sends, "transmission")?;
                *transmissions.entry(*msg).or_insert(0) += 1;
                if from == to {
                    intra += 1;
                } else {
                    inter += 1;
                    network_load += payload;
                }
            }
            TraceBody::IntermediaryMatch { msg, .. } => {
                known(*msg, &sends, "intermediary match")?;
            }
            TraceBody::Forwarded { msg, .. } => {
                known(*msg, &sends, "forward")?;
            }
            TraceBody::Delivered { msg, sent_at, .. } => {
                known(*msg, &sends, "delivery")?;
                if !terminated.insert(*msg) {
                    return Err(malformed(format!("{msg} terminated twice")));
                }
                delivered_msgs.push((*msg, *sent_at, record.at));
            }
            TraceBody::Lost { msg, reason } => {
                known(*msg, &sends, "loss")?;
                if !terminated.insert(*msg) {
                    return Err(malformed(format!("{msg} terminated twice")));
                }
                *losses_by_reason.entry(*reason).or_insert(0) += 1;
            }
            TraceBody::NoMatch { msg, .. } => {
                known(*msg, &sends, "no-match notice")?;
                if !terminated.insert(*msg) {
                    return Err(malformed(format!("{msg} terminated twice")));
                }
                no_match += 1;
            }
            TraceBody::OverloadCheck {
                host, occupancy, ..
            } => {
                occupancy_series
                    .entry(*host)
                    .or_default()
                    .push((record.at, *occupancy));
            }
            TraceBody::Migration { .. } => migrations += 1,
            TraceBody::MigrationAborted { .. } => aborted += 1,
            TraceBody::Proposal { .. } => proposals += 1,
            TraceBody::Poll { .. } => polls += 1,
            _ => {}
        }
    }

    let mut hop_histogram: BTreeMap<Mediation, BTreeMap<u32, u64>> = BTreeMap::new();
    let mut latency_sum = 0u64;
    for &(msg, sent_at, at) in &delivered_msgs {
        if at < sent_at {
            return Err(malformed(format!("{msg} delivered before it was sent")));
        }
        latency_sum += at - sent_at;
        let mediation = sends[&msg];
        let steps = transmissions.get(&msg).copied().unwrap_or(0);
        *hop_histogram
            .entry(mediation)
            .or_default()
            .entry(steps)
            .or_insert(0) += 1;
    }
    let delivered = delivered_msgs.len() as u64;
    let lost: u64 = losses_by_reason.values().sum();
    let total_sends = sends.len() as u64;
    let total_transmissions = inter + intra;

    Ok(MetricsReport {
        horizon,
        window,
        sends: total_sends,
        delivered,
        lost,
        no_match,
        in_flight: total_sends - terminated.len() as u64,
        losses_by_reason,
        inter_host_transmissions: inter,
        intra_host_transmissions: intra,
        inter_host_ratio: if total_transmissions == 0 {
            None
        } else {
            Some(inter as f64 / total_transmissions as f64)
        },
        network_load,
        migrations,
        proposals,
        polls,
        aborted_migrations: aborted,
        mean_delivery_latency: if delivered == 0 {
            None
        } else {
            Some(latency_sum as f64 / delivered as f64)
        },
        hop_histogram,
        occupancy_series: occupancy_series.clone(),
        final_occupancy: occupancy_series
            .iter()
            .filter_map(|(&host, series)| series.last().map(|&(_, occ)| (host, occ)))
            .collect(),
    })
}

/// One metric compared across two runs. `ratio` is `right / left`,
/// absent when the left side is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    pub left: f64,
    pub right: f64,
    pub delta: f64,
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub metrics: BTreeMap<String, MetricComparison>,
}

/// Compare the headline metrics of two runs (typically the same
/// scenario with a mechanism toggled, or two seeds).
pub fn compare_runs(left: &MetricsReport, right: &MetricsReport) -> ComparisonReport {
    let mut metrics = BTreeMap::new();
    let mut add = |name: &str, l: f64, r: f64| {
        metrics.insert(
            name.to_string(),
            MetricComparison {
                left: l,
                right: r,
                delta: r - l,
                ratio: if l == 0.0 { None } else { Some(r / l) },
            },
        );
    };
    add("sends", left.sends as f64, right.sends as f64);
    add("delivered", left.delivered as f64, right.delivered as f64);
    add("lost", left.lost as f64, right.lost as f64);
    add(
        "inter_host_transmissions",
        left.inter_host_transmissions as f64,
        right.inter_host_transmissions as f64,
    );
    add(
        "intra_host_transmissions",
        left.intra_host_transmissions as f64,
        right.intra_host_transmissions as f64,
    );
    add(
        "network_load",
        left.network_load as f64,
        right.network_load as f64,
    );
    add("migrations", left.migrations as f64, right.migrations as f64);
    if let (Some(l), Some(r)) = (left.mean_delivery_latency, right.mean_delivery_latency) {
        add("mean_delivery_latency", l, r);
    }
    ComparisonReport { metrics }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AgentId;
    use crate::trace::RunTrace;

    fn header() -> TraceRecord {
        TraceRecord {
            at: 0,
            seq: 0,
            body: TraceBody::Header {
                schema_version: SCHEMA_VERSION,
                hosts: 2,
                agents: 2,
                window: 10,
                horizon: 100,
            },
        }
    }

    fn send(at: SimTime, seq: u64, msg: u64, mediation: Mediation) -> TraceRecord {
        TraceRecord {
            at,
            seq,
            body: TraceBody::Send {
                msg: MsgId(msg),
                sender: AgentId(0),
                origin: HostId(0),
                mediation,
                payload: 3,
            },
        }
    }

    fn transmission(at: SimTime, seq: u64, msg: u64, from: u32, to: u32) -> TraceRecord {
        TraceRecord {
            at,
            seq,
            body: TraceBody::Transmission {
                msg: MsgId(msg),
                from: HostId(from),
                to: HostId(to),
                arrives: at + 5,
                payload: 3,
                dropped: false,
            },
        }
    }

    fn delivered(at: SimTime, seq: u64, msg: u64, sent_at: SimTime) -> TraceRecord {
        TraceRecord {
            at,
            seq,
            body: TraceBody::Delivered {
                msg: MsgId(msg),
                receiver: AgentId(1),
                host: HostId(1),
                sent_at,
                forwards: 0,
            },
        }
    }

    #[test]
    fn counts_traffic_and_latency() {
        let records = vec![
            header(),
            send(0, 1, 1, Mediation::Direct),
            transmission(0, 2, 1, 0, 1),
            delivered(5, 3, 1, 0),
            send(10, 4, 2, Mediation::Direct),
            transmission(10, 5, 2, 0, 0),
            delivered(10, 6, 2, 10),
        ];
        let report = compute_metrics(&records).unwrap();
        assert_eq!(report.sends, 2);
        assert_eq!(report.delivered, 2);
        assert_eq!(report.in_flight, 0);
        assert_eq!(report.inter_host_transmissions, 1);
        assert_eq!(report.intra_host_transmissions, 1);
        assert_eq!(report.network_load, 3, "only the crossing step counts");
        assert_eq!(report.inter_host_ratio, Some(0.5));
        assert_eq!(report.mean_delivery_latency, Some(2.5));
        assert_eq!(report.hop_histogram[&Mediation::Direct][&1], 2);
    }

    #[test]
    fn rejects_structural_damage() {
        let no_header = vec![send(0, 1, 1, Mediation::Direct)];
        assert!(compute_metrics(&no_header).is_err());

        let orphan_terminal = vec![header(), delivered(5, 1, 9, 0)];
        let err = compute_metrics(&orphan_terminal).unwrap_err();
        assert!(err.to_string().contains("precedes its send"), "{err}");

        let double_terminal = vec![
            header(),
            send(0, 1, 1, Mediation::Direct),
            delivered(5, 2, 1, 0),
            delivered(6, 3, 1, 0),
        ];
        let err = compute_metrics(&double_terminal).unwrap_err();
        assert!(err.to_string().contains("terminated twice"), "{err}");

        let out_of_order = vec![header(), send(5, 9, 1, Mediation::Direct), send(5, 8, 2, Mediation::Direct)];
        let err = compute_metrics(&out_of_order).unwrap_err();
        assert!(err.to_string().contains("out of order"), "{err}");
    }

    #[test]
    fn report_survives_a_jsonl_round_trip() {
        let trace = RunTrace {
            records: vec![
                header(),
                send(0, 1, 1, Mediation::Direct),
                transmission(0, 2, 1, 0, 1),
                delivered(5, 3, 1, 0),
            ],
        };
        let mut bytes = Vec::new();
        trace.write_jsonl(&mut bytes).unwrap();
        let reread = RunTrace::read_jsonl(bytes.as_slice()).unwrap();
        assert_eq!(
            compute_metrics(&trace.records).unwrap(),
            compute_metrics(&reread.records).unwrap()
        );
    }

    #[test]
    fn comparison_handles_zero_baselines() {
        let records = vec![header()];
        let empty = compute_metrics(&records).unwrap();
        let cmp = compare_runs(&empty, &empty);
        assert_eq!(cmp.metrics["sends"].ratio, None);
        assert_eq!(cmp.metrics["sends"].delta, 0.0);
        assert!(!cmp.metrics.contains_key("mean_delivery_latency"));
    }

    #[test]
    fn report_serializes_to_json() {
        let records = vec![
            header(),
            send(0, 1, 1, Mediation::Broker),
            transmission(0, 2, 1, 0, 1),
            delivered(5, 3, 1, 0),
        ];
        let report = compute_metrics(&records).unwrap();
        let json = serde_json::to_string_pretty(&report).unwrap();
        assert!(json.contains("\"broker\""));
        assert!(json.contains("\"network_load\": 3"));
    }
}
