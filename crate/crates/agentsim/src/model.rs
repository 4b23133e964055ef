//! Core identities and the message/agent/group data model shared by
//! every other module.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Simulation clock value in ticks. Starts at zero; only ever advances.
pub type SimTime = u64;

/// Identifies an agent for the lifetime of a run. Agents are a fixed
/// population: ids are dense indices assigned in scenario order.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct AgentId(pub u32);

/// Identifies a host platform. Hosts are numbered `0..host_count`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct HostId(pub u32);

/// Identifies an agent group inside a host's group register. Ids come
/// from a run-global counter so they are unique across hosts and rounds;
/// smaller id means the group was created earlier, which is what the
/// deterministic tie-breaks lean on.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct GroupId(pub u64);

/// Identifies one logical agent message (an [`Envelope`]) across all of
/// its transmission steps, forwards and trace records.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct MsgId(pub u64);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}", self.0)
    }
}

impl fmt::Display for HostId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "h{}", self.0)
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "g{}", self.0)
    }
}

impl fmt::Display for MsgId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}", self.0)
    }
}

/// Where an agent can be found, plus enough history to detect staleness.
///
/// `version` counts completed migrations: it starts at 0 and increases by
/// exactly one every time the agent finishes a move. A cache holding a
/// lower version than the authoritative table is stale but usable — the
/// host it names keeps a forwarding record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtendedAddress {
    pub agent: AgentId,
    /// Host the agent started the run on. Never changes.
    pub home_host: HostId,
    /// Host the agent currently resides on (as of `version`).
    pub current_host: HostId,
    pub version: u32,
}

impl ExtendedAddress {
    pub fn initial(agent: AgentId, home: HostId) -> Self {
        ExtendedAddress {
            agent,
            home_host: home,
            current_host: home,
            version: 0,
        }
    }

    /// Address after one more completed migration onto `to`.
    pub fn migrated(&self, to: HostId) -> Self {
        ExtendedAddress {
            agent: self.agent,
            home_host: self.home_host,
            current_host: to,
            version: self.version + 1,
        }
    }
}

/// Everything the platform knows about one agent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentRecord {
    pub id: AgentId,
    pub address: ExtendedAddress,
    /// Descriptive key/value pairs the agent registers with the
    /// intermediary; attribute queries match against these.
    pub attributes: BTreeMap<String, String>,
    /// Index into the scenario's script table; `None` means the agent
    /// never sends anything on its own.
    pub script: Option<usize>,
    /// Group membership in the current host's register, if any.
    pub local_group: Option<GroupId>,
}

/// A cluster of co-located agents treated as one unit by the load
/// distribution mechanism. Groups never span hosts and are moved whole
/// or not at all.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentGroup {
    pub id: GroupId,
    pub host: HostId,
    pub members: BTreeSet<AgentId>,
}

/// How a message found (or is finding) its receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mediation {
    /// Addressed straight to a known agent.
    Direct,
    /// Routed through an intermediary that forwards the payload itself.
    Broker,
    /// Resolved through an intermediary that returns the receiver's
    /// address; the payload then travels directly.
    Matchmaker,
}

impl fmt::Display for Mediation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mediation::Direct => "direct",
            Mediation::Broker => "broker",
            Mediation::Matchmaker => "matchmaker",
        };
        f.write_str(s)
    }
}

/// An attribute-addressed destination: the receiver is whatever
/// registered agent satisfies every listed equality constraint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeQuery {
    pub required: BTreeMap<String, String>,
}

impl AttributeQuery {
    /// Canonical single-line rendering, used as a cache key for
    /// previously resolved queries.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.required {
            if !out.is_empty() {
                out.push('&');
            }
            out.push_str(k);
            out.push('=');
            out.push_str(v);
        }
        out
    }
}

/// Destination of an envelope as specified by the sender.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    /// A concrete agent, resolved through location caches.
    Agent(AgentId),
    /// An attribute query handled by an intermediary.
    Query(AttributeQuery),
}

/// One host-to-host traversal of an envelope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hop {
    pub host: HostId,
    pub at: SimTime,
}

/// One logical agent message. The envelope object survives across all
/// transmission steps (intermediary legs, forwards) and terminates in
/// exactly one of delivered / lost / no-match.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Envelope {
    pub msg_id: MsgId,
    pub sender: AgentId,
    pub target: Target,
    pub payload_size: u64,
    pub sent_at: SimTime,
    /// Hosts reached so far, one entry per completed transmission step.
    pub hops: Vec<Hop>,
    pub mediation: Mediation,
}
