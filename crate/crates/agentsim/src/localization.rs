//! Interaction localization: moving agents toward the hosts their
//! traffic already favors.
//!
//! Every window close, each host folds its residents' send counts into
//! the dependency ledger (analysis). Every `repetitions` windows a host
//! gets a decision round: for each resident the remote-over-local
//! coefficient is computed against every other host, and agents whose
//! strongest remote pull exceeds the threshold `beta` are proposed for
//! migration to that host — one aggregated proposal per target. The
//! target host then admits or rejects the whole proposal against its
//! capacity; accepted batches move atomically.
//!
//! Decision rounds rotate across hosts (one host per round, ascending
//! id) rather than firing everywhere at once. Hosts in the real system
//! decide on independent clocks; simulating them in lockstep makes
//! mirrored workloads swap their agents back and forth forever, while
//! the rotation lets the ledgers refresh between one host's move and its
//! neighbour's decision.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::dependency::{DependencyLedger, MessageCounts};
use crate::model::{AgentId, HostId, SimTime};

/// Knobs for the localization mechanism.
#[derive(Debug, Clone)]
pub struct LocalizationConfig {
    /// Migration threshold on the remote-over-local coefficient.
    pub beta: f64,
    /// Number of analysis windows between decision rounds.
    pub repetitions: u32,
    /// Window length in ticks.
    pub window: u64,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        LocalizationConfig {
            beta: 1.5,
            repetitions: 3,
            window: 100,
        }
    }
}

/// A batch of agents one host proposes to hand to another. The batch is
/// admitted or rejected whole, and moves atomically on acceptance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MigrationProposal {
    pub source: HostId,
    pub target: HostId,
    pub agents: BTreeSet<AgentId>,
    pub created_at: SimTime,
}

/// Target-side admission verdict on a proposal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdmissionDecision {
    Accept,
    /// How many slots the target is short of fitting the whole batch.
    Reject { shortfall: u32 },
}

/// Fold one closed window of counts into the ledger for every resident,
/// in ascending agent order.
pub fn analysis_phase(
    ledger: &mut DependencyLedger,
    counts: &MessageCounts,
    residents: &BTreeSet<AgentId>,
    hosts: &[HostId],
) {
    for &agent in residents {
        ledger.update_host_dependency(counts, agent, hosts);
    }
}

/// One decision round for the host `own`: pick, per resident, the
/// remote host with the strongest pull (ties to the smallest id) and
/// propose every agent whose pull exceeds `beta`. Returns one proposal
/// per distinct target, in ascending target order.
pub fn distribution_phase(
    ledger: &DependencyLedger,
    residents: &BTreeSet<AgentId>,
    own: HostId,
    hosts: &[HostId],
    beta: f64,
    at: SimTime,
) -> Vec<MigrationProposal> {
    let mut by_target: BTreeMap<HostId, BTreeSet<AgentId>> = BTreeMap::new();
    for &agent in residents {
        let mut best: Option<(HostId, f64)> = None;
        for &host in hosts {
            if host == own {
                continue;
            }
            let m = ledger
                .dependency_coefficient(agent, host, own)
                .expect("host != own");
            match best {
                // Strictly-greater keeps the first (smallest) host on ties.
                Some((_, best_m)) if m <= best_m => {}
                _ => best = Some((host, m)),
            }
        }
        if let Some((target, m)) = best {
            if m > beta {
                by_target.entry(target).or_default().insert(agent);
            }
        }
    }
    by_target
        .into_iter()
        .map(|(target, agents)| MigrationProposal {
            source: own,
            target,
            agents,
            created_at: at,
        })
        .collect()
}

/// Target-side admission check: the batch fits iff current residents
/// plus already promised arrivals plus the batch stay within capacity.
pub fn interaction_phase(
    occupancy: usize,
    reserved: u32,
    capacity: u32,
    incoming: usize,
) -> AdmissionDecision {
    let committed = occupancy as u64 + u64::from(reserved) + incoming as u64;
    if committed <= u64::from(capacity) {
        AdmissionDecision::Accept
    } else {
        AdmissionDecision::Reject {
            shortfall: (committed - u64::from(capacity)) as u32,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const H0: HostId = HostId(0);
    const H1: HostId = HostId(1);
    const H2: HostId = HostId(2);
    const HOSTS: [HostId; 3] = [H0, H1, H2];

    /// Build a ledger by replaying one window of sends per agent:
    /// `(agent, [(host, count), ...])`, with full smoothing weight so
    /// dependencies equal the fractions exactly.
    fn ledger_from(sends: &[(u32, &[(HostId, u64)])]) -> (DependencyLedger, BTreeSet<AgentId>) {
        let mut ledger = DependencyLedger::new(1.0, 1.0);
        let mut counts = MessageCounts::new(0, 1_000);
        let mut residents = BTreeSet::new();
        for (agent, spread) in sends {
            let id = AgentId(*agent);
            residents.insert(id);
            let mut t = 0;
            for (host, n) in spread.iter() {
                for _ in 0..*n {
                    counts.record_send(id, *host, None, t).unwrap();
                    t += 1;
                }
            }
        }
        analysis_phase(&mut ledger, &counts, &residents, &HOSTS);
        (ledger, residents)
    }

    #[test]
    fn analysis_of_empty_host_is_a_no_op() {
        let mut ledger = DependencyLedger::new(0.5, 0.5);
        let counts = MessageCounts::new(0, 10);
        analysis_phase(&mut ledger, &counts, &BTreeSet::new(), &HOSTS);
        assert!(ledger.is_empty());
    }

    #[test]
    fn eighty_twenty_split_lands_at_point_eight() {
        let (ledger, _) = ledger_from(&[(0, &[(H1, 8), (H0, 2)])]);
        assert!((ledger.host_dependency(AgentId(0), H1) - 0.8).abs() < 1e-12);
        assert!((ledger.host_dependency(AgentId(0), H0) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn agent_above_threshold_is_proposed_to_its_argmax_host() {
        // 2/3 remote vs 1/3 local: coefficient 2.0 > 1.5.
        let (ledger, residents) = ledger_from(&[(0, &[(H1, 2), (H0, 1)])]);
        let proposals = distribution_phase(&ledger, &residents, H0, &HOSTS, 1.5, 42);
        assert_eq!(
            proposals,
            vec![MigrationProposal {
                source: H0,
                target: H1,
                agents: BTreeSet::from([AgentId(0)]),
                created_at: 42,
            }]
        );
    }

    #[test]
    fn agent_below_threshold_stays_put() {
        // 6 remote vs 5 local: coefficient 1.2 < 1.5.
        let (ledger, residents) = ledger_from(&[(0, &[(H1, 6), (H0, 5)])]);
        assert!(distribution_phase(&ledger, &residents, H0, &HOSTS, 1.5, 0).is_empty());
    }

    #[test]
    fn purely_local_agent_is_never_proposed() {
        let (ledger, residents) = ledger_from(&[(0, &[(H0, 10)])]);
        assert!(distribution_phase(&ledger, &residents, H0, &HOSTS, 0.1, 0).is_empty());
    }

    #[test]
    fn agent_with_no_local_ties_has_infinite_pull() {
        let (ledger, residents) = ledger_from(&[(0, &[(H2, 3)])]);
        let proposals = distribution_phase(&ledger, &residents, H0, &HOSTS, 1e12, 0);
        assert_eq!(proposals.len(), 1);
        assert_eq!(proposals[0].target, H2);
    }

    #[test]
    fn remote_tie_breaks_to_the_smaller_host_id() {
        let (ledger, residents) = ledger_from(&[(0, &[(H1, 3), (H2, 3), (H0, 1)])]);
        let proposals = distribution_phase(&ledger, &residents, H0, &HOSTS, 1.5, 0);
        assert_eq!(proposals.len(), 1);
        assert_eq!(proposals[0].target, H1);
    }

    #[test]
    fn agents_with_one_target_share_one_proposal() {
        let (ledger, residents) = ledger_from(&[
            (0, &[(H1, 3), (H0, 1)]),
            (1, &[(H1, 5), (H0, 1)]),
        ]);
        let proposals = distribution_phase(&ledger, &residents, H0, &HOSTS, 1.5, 0);
        assert_eq!(proposals.len(), 1);
        assert_eq!(
            proposals[0].agents,
            BTreeSet::from([AgentId(0), AgentId(1)])
        );
    }

    #[test]
    fn distinct_targets_come_out_in_ascending_order() {
        let (ledger, residents) = ledger_from(&[
            (0, &[(H2, 3), (H0, 1)]),
            (1, &[(H1, 3), (H0, 1)]),
        ]);
        let proposals = distribution_phase(&ledger, &residents, H0, &HOSTS, 1.5, 0);
        assert_eq!(proposals.len(), 2);
        assert_eq!(proposals[0].target, H1);
        assert_eq!(proposals[1].target, H2);
    }

    #[test]
    fn raising_the_threshold_only_shrinks_the_proposal_set() {
        let (ledger, residents) = ledger_from(&[
            (0, &[(H1, 2), (H0, 1)]),  // M = 2.0
            (1, &[(H1, 9), (H0, 1)]),  // M = 9.0
            (2, &[(H2, 4), (H0, 3)]),  // M = 4/3
        ]);
        let proposed = |beta: f64| -> BTreeSet<AgentId> {
            distribution_phase(&ledger, &residents, H0, &HOSTS, beta, 0)
                .into_iter()
                .flat_map(|p| p.agents)
                .collect()
        };
        let mut last = proposed(0.5);
        for beta in [1.0, 1.5, 3.0, 10.0] {
            let next = proposed(beta);
            assert!(next.is_subset(&last), "beta={beta}");
            last = next;
        }
        assert_eq!(proposed(0.5).len(), 3);
        assert_eq!(proposed(1.5), BTreeSet::from([AgentId(0), AgentId(1)]));
        assert_eq!(proposed(3.0), BTreeSet::from([AgentId(1)]));
        assert!(proposed(10.0).is_empty());
    }

    #[test]
    fn admission_accepts_exact_fit_and_reports_shortfall() {
        assert_eq!(interaction_phase(4, 0, 5, 1), AdmissionDecision::Accept);
        assert_eq!(
            interaction_phase(4, 0, 5, 2),
            AdmissionDecision::Reject { shortfall: 1 }
        );
        // Promised arrivals count against capacity too.
        assert_eq!(
            interaction_phase(3, 2, 5, 1),
            AdmissionDecision::Reject { shortfall: 1 }
        );
        assert_eq!(interaction_phase(0, 0, 5, 5), AdmissionDecision::Accept);
        assert_eq!(
            interaction_phase(0, 0, 5, 6),
            AdmissionDecision::Reject { shortfall: 1 }
        );
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            // Monotonicity over arbitrary single-window traffic: the set
            // of proposed agents can only shrink as beta grows.
            #[test]
            fn threshold_monotone_over_random_traffic(
                table in proptest::collection::vec(
                    proptest::collection::vec(0u64..6, 3),
                    1..6
                ),
                beta_lo in 0.1f64..5.0,
                beta_hi_delta in 0.0f64..5.0,
            ) {
                let rows: Vec<(u32, Vec<(HostId, u64)>)> = table
                    .iter()
                    .enumerate()
                    .map(|(i, row)| {
                        (i as u32, HOSTS.iter().copied().zip(row.iter().copied()).collect())
                    })
                    .collect();
                let borrowed: Vec<(u32, &[(HostId, u64)])> =
                    rows.iter().map(|(a, r)| (*a, r.as_slice())).collect();
                let (ledger, residents) = ledger_from(&borrowed);
                let beta_hi = beta_lo + beta_hi_delta;
                let lo: BTreeSet<AgentId> =
                    distribution_phase(&ledger, &residents, H0, &HOSTS, beta_lo, 0)
                        .into_iter().flat_map(|p| p.agents).collect();
                let hi: BTreeSet<AgentId> =
                    distribution_phase(&ledger, &residents, H0, &HOSTS, beta_hi, 0)
                        .into_iter().flat_map(|p| p.agents).collect();
                prop_assert!(hi.is_subset(&lo));
            }
        }
    }
}
