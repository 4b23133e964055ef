//! Group-based load distribution: an overloaded host clusters its
//! residents by who they actually talk to, then pushes whole clusters
//! to the remote host they depend on most.
//!
//! The host's *group register* persists across activations. When an
//! activation starts, ungrouped residents are seeded as singleton
//! groups; a monitoring window then attributes each intra-host send to
//! the receiver's group, and a grouping pass reassigns every agent to
//! the group it talked to most. Passes run one agent at a time in
//! ascending id order against the live register — two agents that only
//! talk to each other therefore *merge* (the second one finds its
//! partner's old group gone and stays put) instead of endlessly
//! swapping seats. After each pass the group dependencies are zeroed so
//! the next window measures the new shape from scratch.
//!
//! Once the configured number of passes has run, the host picks the
//! group with the highest remote-over-local dependence ratio and offers
//! it, whole, to remote hosts in descending dependence order. Groups
//! are never split: a host that cannot take all members takes none.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::dependency::DependencyLedger;
use crate::model::{AgentGroup, AgentId, GroupId, HostId};

#[derive(Debug, Error, PartialEq)]
pub enum DistributionError {
    /// Group selection ran on a host with an empty register.
    #[error("no groups registered on host {host}")]
    NoGroups { host: HostId },
    /// Target selection ran in a single-host world.
    #[error("no remote host exists to receive a group")]
    NoRemoteHost,
}

/// A host's registry of agent groups. Membership is authoritative here;
/// the per-agent `local_group` field mirrors it.
#[derive(Debug, Clone)]
pub struct GroupRegister {
    pub host: HostId,
    groups: BTreeMap<GroupId, AgentGroup>,
    membership: BTreeMap<AgentId, GroupId>,
    /// Completed grouping passes since the register was created.
    pub round: u64,
}

impl GroupRegister {
    pub fn new(host: HostId) -> Self {
        GroupRegister {
            host,
            groups: BTreeMap::new(),
            membership: BTreeMap::new(),
            round: 0,
        }
    }

    pub fn groups(&self) -> impl Iterator<Item = &AgentGroup> {
        self.groups.values()
    }

    pub fn group_ids(&self) -> Vec<GroupId> {
        self.groups.keys().copied().collect()
    }

    pub fn get(&self, id: GroupId) -> Option<&AgentGroup> {
        self.groups.get(&id)
    }

    pub fn group_of(&self, agent: AgentId) -> Option<GroupId> {
        self.membership.get(&agent).copied()
    }

    pub fn membership(&self) -> &BTreeMap<AgentId, GroupId> {
        &self.membership
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Bring the register in line with the current resident set:
    /// departed agents are pruned (empty groups deleted), residents
    /// without a group get fresh singletons in ascending agent order.
    pub fn seed(&mut self, residents: &BTreeSet<AgentId>, next_group_id: &mut u64) {
        let departed: Vec<AgentId> = self
            .membership
            .keys()
            .copied()
            .filter(|a| !residents.contains(a))
            .collect();
        for agent in departed {
            self.remove_agent(agent);
        }
        for &agent in residents {
            if !self.membership.contains_key(&agent) {
                let id = GroupId(*next_group_id);
                *next_group_id += 1;
                self.insert_group(AgentGroup {
                    id,
                    host: self.host,
                    members: BTreeSet::from([agent]),
                });
            }
        }
    }

    /// Add a whole group (e.g. one that just migrated in). Members that
    /// already belong to another group are moved out of it first.
    pub fn insert_group(&mut self, group: AgentGroup) {
        for &member in &group.members.clone() {
            if self.membership.contains_key(&member) {
                self.remove_agent(member);
            }
            self.membership.insert(member, group.id);
        }
        let mut group = group;
        group.host = self.host;
        self.groups.insert(group.id, group);
    }

    /// Detach a whole group (e.g. one about to migrate out).
    pub fn remove_group(&mut self, id: GroupId) -> Option<AgentGroup> {
        let group = self.groups.remove(&id)?;
        for member in &group.members {
            self.membership.remove(member);
        }
        Some(group)
    }

    /// Drop a single agent (e.g. one that migrated away individually).
    /// Its group shrinks and disappears if now empty.
    pub fn remove_agent(&mut self, agent: AgentId) {
        if let Some(gid) = self.membership.remove(&agent) {
            let emptied = if let Some(group) = self.groups.get_mut(&gid) {
                group.members.remove(&agent);
                group.members.is_empty()
            } else {
                false
            };
            if emptied {
                self.groups.remove(&gid);
            }
        }
    }

    fn move_agent(&mut self, agent: AgentId, from: GroupId, to: GroupId) {
        let emptied = {
            let group = self.groups.get_mut(&from).expect("agent's group exists");
            group.members.remove(&agent);
            group.members.is_empty()
        };
        if emptied {
            self.groups.remove(&from);
        }
        self.groups
            .get_mut(&to)
            .expect("target group exists")
            .members
            .insert(agent);
        self.membership.insert(agent, to);
    }
}

/// Level-triggered overload test: strictly more residents than slots.
pub fn overload_check(occupancy: usize, capacity: u32) -> bool {
    occupancy as u64 > u64::from(capacity)
}

/// One grouping pass: every resident, in ascending id order, joins the
/// co-located group its smoothed intra-host traffic favors most (ties
/// to the smallest group id); an all-zero row keeps the agent where it
/// is. The register is updated live during the pass, and the residents'
/// group dependencies are zeroed at the end so the next monitoring
/// window starts clean. Returns the resulting membership.
pub fn grouping_pass(
    register: &mut GroupRegister,
    ledger: &mut DependencyLedger,
    residents: &BTreeSet<AgentId>,
) -> BTreeMap<AgentId, GroupId> {
    for &agent in residents {
        let current = match register.group_of(agent) {
            Some(gid) => gid,
            // Not seeded (e.g. arrived mid-activation): skip; the next
            // seeding will pick it up.
            None => continue,
        };
        let mut best: Option<(GroupId, f64)> = None;
        for gid in register.group_ids() {
            let d = ledger.group_dependency(agent, gid);
            match best {
                Some((_, best_d)) if d <= best_d => {}
                _ => best = Some((gid, d)),
            }
        }
        let target = match best {
            Some((gid, d)) if d > 0.0 => gid,
            _ => current,
        };
        if target != current {
            register.move_agent(agent, current, target);
        }
    }
    register.round += 1;
    ledger.reset_group_dependencies(residents.iter().copied());
    register.membership().clone()
}

/// Pick the group to push away: the one whose members' total dependence
/// on remote hosts is largest relative to their dependence on this
/// host. A group with no local ties but remote ones ranks infinitely
/// high; a group with no ties at all ranks zero. Ties go to the
/// smallest group id.
pub fn select_group(
    register: &GroupRegister,
    ledger: &DependencyLedger,
    own: HostId,
    hosts: &[HostId],
) -> Result<GroupId, DistributionError> {
    if register.is_empty() {
        return Err(DistributionError::NoGroups { host: own });
    }
    let mut best: Option<(GroupId, f64)> = None;
    for group in register.groups() {
        let local = ledger.group_host_dependence(group, own);
        let remote: f64 = hosts
            .iter()
            .filter(|&&h| h != own)
            .map(|&h| ledger.group_host_dependence(group, h))
            .sum();
        let ratio = if local == 0.0 {
            if remote > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        } else {
            remote / local
        };
        match best {
            Some((_, best_ratio)) if ratio <= best_ratio => {}
            _ => best = Some((group.id, ratio)),
        }
    }
    Ok(best.expect("register not empty").0)
}

/// Pick the destination for a group: the remote host its members
/// depend on most (ties to the smallest host id; an all-zero row lands
/// on the smallest remote host).
pub fn select_target(
    group: &AgentGroup,
    ledger: &DependencyLedger,
    own: HostId,
    hosts: &[HostId],
) -> Result<HostId, DistributionError> {
    ranked_targets(group, ledger, own, hosts)
        .first()
        .copied()
        .ok_or(DistributionError::NoRemoteHost)
}

/// All remote hosts ordered by descending dependence of the group on
/// them, ties toward the smaller id. Polling walks this list.
pub fn ranked_targets(
    group: &AgentGroup,
    ledger: &DependencyLedger,
    own: HostId,
    hosts: &[HostId],
) -> Vec<HostId> {
    let mut ranked: Vec<(HostId, f64)> = hosts
        .iter()
        .filter(|&&h| h != own)
        .map(|&h| (h, ledger.group_host_dependence(group, h)))
        .collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("dependence sums are finite")
            .then(a.0.cmp(&b.0))
    });
    ranked.into_iter().map(|(h, _)| h).collect()
}
