//! Attribute-addressed messaging support: the intermediary's fragment
//! space, the authoritative name server, and the per-host location
//! caches with their forwarding rules.
//!
//! Agents with attributes register a *data fragment* (attributes plus
//! current address) with the intermediary. Attribute-addressed sends are
//! matched against those fragments. The name server and the fragments
//! are updated synchronously whenever a migration completes, so the
//! intermediary never holds a stale address; per-host location caches on
//! the other hand learn lazily — a host only finds out an agent moved
//! when a message it handled gets forwarded and the delivery notice
//! comes back.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AgentId, AgentRecord, AttributeQuery, ExtendedAddress, HostId, SimTime};

#[derive(Debug, Error, PartialEq)]
pub enum IntermediaryError {
    /// A location update carried a version not newer than the stored
    /// one. Versions only ever increase, so this is a protocol bug.
    #[error("location update for {agent} regressed: stored version {stored}, got {got}")]
    VersionRegression {
        agent: AgentId,
        stored: u32,
        got: u32,
    },
}

/// One registered description: who the agent is, what it advertises,
/// and where it currently lives.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataFragment {
    pub owner: AgentId,
    pub attributes: BTreeMap<String, String>,
    pub address: ExtendedAddress,
    pub registered_at: SimTime,
}

/// Decides whether a fragment satisfies a query. Kept behind a trait so
/// richer matching (ranges, scoring) can slot in without touching the
/// space; the shipped implementation is an exact-equality conjunction.
pub trait SearchStrategy: Send + Sync {
    fn matches(&self, query: &AttributeQuery, fragment: &DataFragment) -> bool;
}

/// Default strategy: every `key = value` pair in the query must be
/// present verbatim in the fragment's attributes.
#[derive(Debug, Default, Clone, Copy)]
pub struct ConjunctiveEquality;

impl SearchStrategy for ConjunctiveEquality {
    fn matches(&self, query: &AttributeQuery, fragment: &DataFragment) -> bool {
        query
            .required
            .iter()
            .all(|(k, v)| fragment.attributes.get(k) == Some(v))
    }
}

/// The intermediary's set of registered fragments.
pub struct FragmentSpace {
    host: HostId,
    fragments: BTreeMap<AgentId, DataFragment>,
    strategy: Box<dyn SearchStrategy>,
}

impl fmt::Debug for FragmentSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FragmentSpace")
            .field("host", &self.host)
            .field("fragments", &self.fragments)
            .finish_non_exhaustive()
    }
}

impl FragmentSpace {
    pub fn new(host: HostId) -> Self {
        Self::with_strategy(host, Box::new(ConjunctiveEquality))
    }

    pub fn with_strategy(host: HostId, strategy: Box<dyn SearchStrategy>) -> Self {
        FragmentSpace {
            host,
            fragments: BTreeMap::new(),
            strategy,
        }
    }

    /// Host the intermediary runs on; mediated messages travel via it.
    pub fn host(&self) -> HostId {
        self.host
    }

    /// Register (or re-register) an agent's description. A second
    /// registration by the same owner replaces the first.
    pub fn register(&mut self, record: &AgentRecord, at: SimTime) {
        self.fragments.insert(
            record.id,
            DataFragment {
                owner: record.id,
                attributes: record.attributes.clone(),
                address: record.address,
                registered_at: at,
            },
        );
    }

    /// All fragments satisfying the query, in ascending owner order.
    /// "First match" policies take the head of this list, so ties go to
    /// the smallest agent id.
    pub fn match_query(&self, query: &AttributeQuery) -> Vec<&DataFragment> {
        self.fragments
            .values()
            .filter(|fragment| self.strategy.matches(query, fragment))
            .collect()
    }

    pub fn first_match(&self, query: &AttributeQuery) -> Option<&DataFragment> {
        self.match_query(query).into_iter().next()
    }

    /// Synchronous address refresh on migration. Unregistered agents
    /// (no attributes) have no fragment to refresh.
    pub fn refresh_address(&mut self, agent: AgentId, address: ExtendedAddress) {
        if let Some(fragment) = self.fragments.get_mut(&agent) {
            fragment.address = address;
        }
    }

    pub fn len(&self) -> usize {
        self.fragments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fragments.is_empty()
    }
}

/// Authoritative agent-location table. There is exactly one per run and
/// it is updated synchronously at every completed migration, so reads
/// always see the latest completed move.
#[derive(Debug, Default, Clone)]
pub struct NameServerTable {
    entries: BTreeMap<AgentId, ExtendedAddress>,
}

impl NameServerTable {
    pub fn new(initial: impl IntoIterator<Item = ExtendedAddress>) -> Self {
        NameServerTable {
            entries: initial.into_iter().map(|a| (a.agent, a)).collect(),
        }
    }

    pub fn lookup(&self, agent: AgentId) -> Option<&ExtendedAddress> {
        self.entries.get(&agent)
    }

    /// Record a completed migration. The new address must carry a
    /// strictly larger version than the stored one.
    pub fn update_location(
        &mut self,
        address: ExtendedAddress,
    ) -> Result<(), IntermediaryError> {
        if let Some(stored) = self.entries.get(&address.agent) {
            if address.version <= stored.version {
                return Err(IntermediaryError::VersionRegression {
                    agent: address.agent,
                    stored: stored.version,
                    got: address.version,
                });
            }
        }
        self.entries.insert(address.agent, address);
        Ok(())
    }
}

/// One host's lazily maintained view of where agents live.
#[derive(Debug, Clone)]
pub struct LocationCache {
    pub host: HostId,
    entries: BTreeMap<AgentId, ExtendedAddress>,
}

impl LocationCache {
    pub fn new(host: HostId, initial: impl IntoIterator<Item = ExtendedAddress>) -> Self {
        LocationCache {
            host,
            entries: initial.into_iter().map(|a| (a.agent, a)).collect(),
        }
    }

    pub fn get(&self, agent: AgentId) -> Option<&ExtendedAddress> {
        self.entries.get(&agent)
    }

    /// Adopt `address` only if it is strictly newer than what the cache
    /// already holds. Returns whether the cache changed. Keeping this
    /// monotonic means late or reordered notices can never roll a cache
    /// back to a stale location.
    pub fn insert_if_newer(&mut self, address: ExtendedAddress) -> bool {
        match self.entries.get(&address.agent) {
            Some(stored) if address.version <= stored.version => false,
            _ => {
                self.entries.insert(address.agent, address);
                true
            }
        }
    }
}

/// Why a message died in transit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossReason {
    /// The network dropped a transmission step.
    NetworkDrop,
    /// The receiver kept moving and the per-message forwarding budget
    /// ran out.
    ForwardLimit,
    /// The arrival host had no fresher location than itself to offer.
    NoRoute,
}

/// Outcome of an envelope arriving at a host that may or may not still
/// house the receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Resolution {
    /// The receiver is here; hand the message over.
    Deliver,
    /// The receiver moved; re-send toward this fresher address.
    Forward(ExtendedAddress),
    /// No way to make progress.
    Lose(LossReason),
}

/// Decide what a host does with a message addressed to `receiver` that
/// just arrived. `resident` says whether the receiver currently lives
/// here; `known` is the host's cache entry for the receiver (a host a
/// receiver migrated away from keeps its new address as a forwarding
/// record).
pub fn resolve_or_forward(
    here: HostId,
    resident: bool,
    known: Option<&ExtendedAddress>,
    forwards_so_far: u32,
    max_forwards: u32,
) -> Resolution {
    if resident {
        return Resolution::Deliver;
    }
    match known {
        Some(address) if address.current_host != here => {
            if forwards_so_far >= max_forwards {
                Resolution::Lose(LossReason::ForwardLimit)
            } else {
                Resolution::Forward(*address)
            }
        }
        _ => Resolution::Lose(LossReason::NoRoute),
    }
}
