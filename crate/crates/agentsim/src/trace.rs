//! Run traces: the append-only record stream a run produces.
//!
//! Every record carries the simulation time `at` and the scheduler
//! sequence number `seq` of the event that produced it, so the stream is
//! strictly ordered even within a tick. Traces serialize to JSON lines —
//! one self-describing object per line, first line is the header — and
//! are the *only* input the metrics layer reads: anything worth
//! measuring must land here.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::intermediary::LossReason;
use crate::model::{AgentId, GroupId, HostId, Mediation, MsgId, SimTime};

/// Bump when the record shapes change incompatibly.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("cannot read trace: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace line {line} is not a valid record: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub at: SimTime,
    pub seq: u64,
    #[serde(flatten)]
    pub body: TraceBody,
}

/// Whether a migration batch came from the per-agent localization round
/// or moved a whole register group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchKind {
    Individual,
    Group,
}

/// How a host cache learned a fresher address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheUpdateSource {
    /// Delivery notice piggybacked back to the original sender after a
    /// forwarded delivery.
    Piggyback,
    /// A matchmaker lookup reply.
    MatchmakerReply,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSnapshot {
    pub id: GroupId,
    pub members: Vec<AgentId>,
}

/// One smoothed host-dependency value, exported at window close.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub agent: AgentId,
    pub host: HostId,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceBody {
    /// First record of every trace.
    Header {
        schema_version: u32,
        hosts: u32,
        agents: u32,
        window: u64,
        horizon: u64,
    },

    // -- setup ---------------------------------------------------------
    /// An agent with attributes registered its description with the
    /// intermediary.
    FragmentRegistered {
        agent: AgentId,
        host: HostId,
        version: u32,
    },

    // -- messaging -----------------------------------------------------
    /// An agent initiated a message.
    Send {
        msg: MsgId,
        sender: AgentId,
        origin: HostId,
        mediation: Mediation,
        payload: u64,
    },
    /// One host-to-host transmission step. `dropped` marks steps the
    /// lossy network swallowed (the arrival then never happens).
    Transmission {
        msg: MsgId,
        from: HostId,
        to: HostId,
        arrives: SimTime,
        payload: u64,
        dropped: bool,
    },
    /// The intermediary matched (or failed to match) an
    /// attribute-addressed message against its fragments.
    IntermediaryMatch {
        msg: MsgId,
        matched: Option<AgentId>,
    },
    /// A host re-sent a message toward the receiver's fresher address.
    Forwarded {
        msg: MsgId,
        host: HostId,
        toward: HostId,
        version: u32,
    },
    /// A host cache adopted a fresher address.
    CacheUpdated {
        host: HostId,
        agent: AgentId,
        version: u32,
        via: CacheUpdateSource,
    },
    /// Terminal: the receiver got the message.
    Delivered {
        msg: MsgId,
        receiver: AgentId,
        host: HostId,
        sent_at: SimTime,
        forwards: u32,
    },
    /// Terminal: the message died in transit.
    Lost { msg: MsgId, reason: LossReason },
    /// Terminal: no registered agent satisfied the query; the sender
    /// was notified.
    NoMatch { msg: MsgId, sender: AgentId },

    // -- periodic bookkeeping -------------------------------------------
    WindowClosed { host: HostId, index: u64 },
    /// Smoothed host-dependency table of one host after a window close.
    /// Only emitted when non-empty.
    LedgerSnapshot {
        host: HostId,
        entries: Vec<LedgerEntry>,
    },
    /// Level check of occupancy against capacity; one per host per
    /// window.
    OverloadCheck {
        host: HostId,
        occupancy: u32,
        capacity: u32,
        overloaded: bool,
    },
    /// The check found the host over capacity.
    Overload {
        host: HostId,
        occupancy: u32,
        capacity: u32,
    },

    // -- migration machinery ---------------------------------------------
    /// A localization round proposed a batch of agents to one target.
    Proposal {
        id: u64,
        source: HostId,
        target: HostId,
        agents: Vec<AgentId>,
    },
    /// An overloaded host offered a whole group to a target
    /// (`attempt` counts offers for this group, starting at 0).
    Poll {
        id: u64,
        group: GroupId,
        source: HostId,
        target: HostId,
        agents: Vec<AgentId>,
        attempt: u32,
    },
    /// Target-side admission verdict on a proposal or poll.
    Admission {
        id: u64,
        target: HostId,
        accepted: bool,
        shortfall: Option<u32>,
    },
    /// Result of one grouping pass on a host.
    Grouping {
        host: HostId,
        round: u64,
        groups: Vec<GroupSnapshot>,
    },
    /// One agent finished moving. Batch-mates share `id` and `at`.
    Migration {
        id: u64,
        agent: AgentId,
        from: HostId,
        to: HostId,
        version: u32,
        batch: BatchKind,
        group: Option<GroupId>,
    },
    /// A migration executed against a stale proposal and moved nobody.
    MigrationAborted { id: u64, reason: String },
    /// Every polled target rejected the group; the host backs off.
    AllRejected {
        host: HostId,
        group: GroupId,
        retry_at: SimTime,
    },
    /// The backed-off host re-entered the distribution pipeline (or
    /// found itself no longer overloaded: `resumed = false`).
    Retry { host: HostId, resumed: bool },
}

/// An entire run's records, in emission order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
}

impl RunTrace {
    pub fn push(&mut self, at: SimTime, seq: u64, body: TraceBody) {
        self.records.push(TraceRecord { at, seq, body });
    }

    /// Serialize as JSON lines. Output is byte-deterministic for a
    /// given record stream.
    pub fn write_jsonl(&self, mut writer: impl Write) -> Result<(), TraceError> {
        for record in &self.records {
            serde_json::to_writer(&mut writer, record)
                .map_err(|e| TraceError::Io(e.into()))?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(reader: impl BufRead) -> Result<RunTrace, TraceError> {
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record = serde_json::from_str(&line)
                .map_err(|source| TraceError::Parse { line: i + 1, source })?;
            records.push(record);
        }
        Ok(RunTrace { records })
    }
}
