//! Per-host bookkeeping of who talks to whom.
//!
//! Each host keeps two things per resident agent:
//!
//! * raw per-window message counts ([`MessageCounts`]) — how many
//!   messages the agent sent toward each host and toward each co-located
//!   group during the current observation window;
//! * exponentially smoothed dependency values ([`DependencyLedger`]) —
//!   at every window close the count fractions are folded into a moving
//!   average, so the ledger remembers where an agent's traffic has been
//!   going lately without keeping history.
//!
//! Dependency values always stay in `[0, 1]`: an update replaces `D`
//! with `decay * fraction + (1 - decay) * D`, and a window in which the
//! agent stayed silent simply decays every entry. The derived quantities
//! — the remote-over-local coefficient and the group-to-host dependence
//! sum — are what the localization and distribution mechanisms act on.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::model::{AgentGroup, AgentId, GroupId, HostId, SimTime};

#[derive(Debug, Error, PartialEq)]
pub enum DependencyError {
    /// A send was recorded with a timestamp outside the currently open
    /// window. The engine always rolls windows before recording, so
    /// hitting this means the scheduler mis-ordered events.
    #[error("send at t={at} outside open window [{window_start}, {window_end})")]
    OutOfWindow {
        at: SimTime,
        window_start: SimTime,
        window_end: SimTime,
    },
    /// The remote-over-local coefficient is undefined against the
    /// agent's own host.
    #[error("dependency coefficient queried against the agent's own host {host}")]
    SameHost { host: HostId },
}

/// Raw send counts for one observation window `[window_start, window_end)`.
#[derive(Debug, Clone, Default, Serialize)]
pub struct MessageCounts {
    pub window_start: SimTime,
    pub window_end: SimTime,
    per_host: BTreeMap<AgentId, BTreeMap<HostId, u64>>,
    per_group: BTreeMap<AgentId, BTreeMap<GroupId, u64>>,
}

impl MessageCounts {
    pub fn new(window_start: SimTime, window_end: SimTime) -> Self {
        debug_assert!(window_start < window_end);
        MessageCounts {
            window_start,
            window_end,
            per_host: BTreeMap::new(),
            per_group: BTreeMap::new(),
        }
    }

    /// Record one message sent by `sender` toward an agent residing on
    /// `receiver_host`. When the receiver is co-located and grouped,
    /// `receiver_group` attributes the send to that group as well.
    pub fn record_send(
        &mut self,
        sender: AgentId,
        receiver_host: HostId,
        receiver_group: Option<GroupId>,
        at: SimTime,
    ) -> Result<(), DependencyError> {
        if at < self.window_start || at >= self.window_end {
            return Err(DependencyError::OutOfWindow {
                at,
                window_start: self.window_start,
                window_end: self.window_end,
            });
        }
        *self
            .per_host
            .entry(sender)
            .or_default()
            .entry(receiver_host)
            .or_insert(0) += 1;
        if let Some(group) = receiver_group {
            *self
                .per_group
                .entry(sender)
                .or_default()
                .entry(group)
                .or_insert(0) += 1;
        }
        Ok(())
    }

    /// Close the current window and open the next one of equal length.
    /// All counts reset to zero.
    pub fn advance(&mut self) {
        let len = self.window_end - self.window_start;
        self.window_start = self.window_end;
        self.window_end += len;
        self.per_host.clear();
        self.per_group.clear();
    }

    pub fn host_count(&self, agent: AgentId, host: HostId) -> u64 {
        self.per_host
            .get(&agent)
            .and_then(|row| row.get(&host))
            .copied()
            .unwrap_or(0)
    }

    /// Total messages `agent` sent this window, over all receiver hosts.
    pub fn host_total(&self, agent: AgentId) -> u64 {
        self.per_host
            .get(&agent)
            .map(|row| row.values().sum())
            .unwrap_or(0)
    }

    pub fn group_count(&self, agent: AgentId, group: GroupId) -> u64 {
        self.per_group
            .get(&agent)
            .and_then(|row| row.get(&group))
            .copied()
            .unwrap_or(0)
    }
}

/// Smoothed dependency state for the agents of one host.
///
/// `decay_host` weights host-level updates, `decay_group` group-level
/// ones; both live in `[0, 1]`. A ledger belongs to exactly one host and
/// is only ever touched while handling that host's events. Entries do
/// not travel: an agent arriving on a new host starts from zero there.
#[derive(Debug, Clone, Serialize)]
pub struct DependencyLedger {
    decay_host: f64,
    decay_group: f64,
    host_dep: BTreeMap<AgentId, BTreeMap<HostId, f64>>,
    group_dep: BTreeMap<AgentId, BTreeMap<GroupId, f64>>,
}

impl DependencyLedger {
    pub fn new(decay_host: f64, decay_group: f64) -> Self {
        debug_assert!((0.0..=1.0).contains(&decay_host));
        debug_assert!((0.0..=1.0).contains(&decay_group));
        DependencyLedger {
            decay_host,
            decay_group,
            host_dep: BTreeMap::new(),
            group_dep: BTreeMap::new(),
        }
    }

    /// Fold one closed window of counts into `agent`'s host-dependency
    /// row. Every host in `hosts` is updated: hosts that received a
    /// share of the traffic move toward that share, the rest decay. If
    /// the agent sent nothing at all, the whole row just decays.
    pub fn update_host_dependency(
        &mut self,
        counts: &MessageCounts,
        agent: AgentId,
        hosts: &[HostId],
    ) {
        let total = counts.host_total(agent);
        if total == 0 && !self.host_dep.contains_key(&agent) {
            // Nothing to decay and nothing new: silence never creates
            // ledger state.
            return;
        }
        let row = self.host_dep.entry(agent).or_default();
        for &host in hosts {
            let prior = row.get(&host).copied().unwrap_or(0.0);
            let next = if total == 0 {
                (1.0 - self.decay_host) * prior
            } else {
                let fraction = counts.host_count(agent, host) as f64 / total as f64;
                self.decay_host * fraction + (1.0 - self.decay_host) * prior
            };
            row.insert(host, next);
        }
    }

    /// Fold one closed window of counts into `agent`'s group-dependency
    /// row. The denominator is the agent's intra-host total — every
    /// message it sent to anyone on `own_host` — so the fractions over
    /// the co-located groups sum to at most one.
    pub fn update_group_dependency(
        &mut self,
        counts: &MessageCounts,
        agent: AgentId,
        groups: &[GroupId],
        own_host: HostId,
    ) {
        let intra_total = counts.host_count(agent, own_host);
        if intra_total == 0 && !self.group_dep.contains_key(&agent) {
            return;
        }
        let row = self.group_dep.entry(agent).or_default();
        for &group in groups {
            let prior = row.get(&group).copied().unwrap_or(0.0);
            let next = if intra_total == 0 {
                (1.0 - self.decay_group) * prior
            } else {
                let fraction = counts.group_count(agent, group) as f64 / intra_total as f64;
                self.decay_group * fraction + (1.0 - self.decay_group) * prior
            };
            row.insert(group, next);
        }
    }

    pub fn host_dependency(&self, agent: AgentId, host: HostId) -> f64 {
        self.host_dep
            .get(&agent)
            .and_then(|row| row.get(&host))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn group_dependency(&self, agent: AgentId, group: GroupId) -> f64 {
        self.group_dep
            .get(&agent)
            .and_then(|row| row.get(&group))
            .copied()
            .unwrap_or(0.0)
    }

    /// Remote-over-local dependency coefficient of `agent` (resident on
    /// `own_host`) toward `host`.
    ///
    /// Both dependencies zero yields 0 (no signal either way); a zero
    /// local dependency with a positive remote one yields `+inf` — the
    /// agent has no local ties at all, so any remote pull dominates.
    pub fn dependency_coefficient(
        &self,
        agent: AgentId,
        host: HostId,
        own_host: HostId,
    ) -> Result<f64, DependencyError> {
        if host == own_host {
            return Err(DependencyError::SameHost { host });
        }
        let remote = self.host_dependency(agent, host);
        let local = self.host_dependency(agent, own_host);
        if local == 0.0 {
            if remote == 0.0 {
                Ok(0.0)
            } else {
                Ok(f64::INFINITY)
            }
        } else {
            Ok(remote / local)
        }
    }

    /// Dependence of a whole group on `host`: the sum of the members'
    /// host dependencies. Linear by construction — disjoint groups add.
    pub fn group_host_dependence(&self, group: &AgentGroup, host: HostId) -> f64 {
        group
            .members
            .iter()
            .map(|&member| self.host_dependency(member, host))
            .sum()
    }

    /// Wipe the group-dependency rows of the given agents. Runs after
    /// every grouping pass so the next monitoring window starts fresh.
    pub fn reset_group_dependencies(&mut self, agents: impl IntoIterator<Item = AgentId>) {
        for agent in agents {
            self.group_dep.remove(&agent);
        }
    }

    /// Drop everything known about `agent`; used when it migrates away.
    pub fn remove_agent(&mut self, agent: AgentId) {
        self.host_dep.remove(&agent);
        self.group_dep.remove(&agent);
    }

    /// Current host-dependency table, for trace export.
    pub fn host_table(&self) -> &BTreeMap<AgentId, BTreeMap<HostId, f64>> {
        &self.host_dep
    }

    pub fn is_empty(&self) -> bool {
        self.host_dep.is_empty() && self.group_dep.is_empty()
    }
}
