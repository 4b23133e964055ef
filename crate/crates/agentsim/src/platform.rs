//! Per-host runtime state: everything one host owns and mutates while
//! handling its own events.

use std::collections::{BTreeMap, BTreeSet};

use crate::dependency::{DependencyLedger, MessageCounts};
use crate::distribution::GroupRegister;
use crate::intermediary::LocationCache;
use crate::model::{AgentId, ExtendedAddress, GroupId, HostId};

/// Stage of a host's load-distribution activation. At most one
/// activation runs per host at a time; the overload monitor only starts
/// a new one when none is active.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Activation {
    /// Watching intra-host traffic; one grouping pass per window close,
    /// `passes_done` of them so far.
    Monitoring { passes_done: u32 },
    /// A group was selected and is being offered around; the engine's
    /// transfer table tracks the outstanding poll.
    Negotiating { group: GroupId },
    /// Every target rejected the group; waiting for the retry event.
    BackingOff,
}

/// One simulated host platform.
#[derive(Debug)]
pub struct HostPlatform {
    pub id: HostId,
    pub capacity: u32,
    pub residents: BTreeSet<AgentId>,
    /// Send counts of the currently open window.
    pub counts: MessageCounts,
    /// Smoothed dependency state of this host's residents.
    pub ledger: DependencyLedger,
    /// Lazily maintained agent-location view.
    pub cache: LocationCache,
    /// Previously resolved attribute queries (canonical form) and the
    /// agent they resolved to; lets repeat matchmaker contacts skip the
    /// intermediary.
    pub query_bindings: BTreeMap<String, AgentId>,
    pub register: GroupRegister,
    /// Arrivals promised to in-flight accepted transfers; counts
    /// against capacity until the agents actually land.
    pub reserved: u32,
    /// Windows closed on this host so far.
    pub windows_closed: u64,
    pub activation: Option<Activation>,
}

impl HostPlatform {
    pub fn new(
        id: HostId,
        capacity: u32,
        window: u64,
        decay_host: f64,
        decay_group: f64,
        initial_addresses: impl IntoIterator<Item = ExtendedAddress>,
    ) -> Self {
        HostPlatform {
            id,
            capacity,
            residents: BTreeSet::new(),
            counts: MessageCounts::new(0, window),
            ledger: DependencyLedger::new(decay_host, decay_group),
            cache: LocationCache::new(id, initial_addresses),
            query_bindings: BTreeMap::new(),
            register: GroupRegister::new(id),
            reserved: 0,
            windows_closed: 0,
            activation: None,
        }
    }

    pub fn occupancy(&self) -> usize {
        self.residents.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_host_is_idle_and_empty() {
        let h = HostPlatform::new(HostId(1), 5, 100, 0.5, 0.5, []);
        assert_eq!(h.occupancy(), 0);
        assert_eq!(h.reserved, 0);
        assert!(h.activation.is_none());
        assert_eq!(h.counts.window_end, 100);
        assert!(h.register.is_empty());
    }
}
