//! The discrete-event engine: one seeded, single-threaded run of a
//! scenario producing a deterministic record trace.
//!
//! # Ordering law
//!
//! Every event carries `(at, seq)` where `seq` is assigned once, at
//! scheduling time, from a run-global counter. The queue pops strictly
//! by `(at, seq)`, which is a total order because `seq` is unique.
//! Window-close and overload-check events for the whole horizon are
//! scheduled up front, before any agent activity, so at a window
//! boundary every close (hosts in ascending order) runs before every
//! overload check, and both run before any send or arrival that lands
//! on the same tick. Sends on a boundary tick therefore always count
//! into the window that opens at that tick.
//!
//! # Randomness
//!
//! The seeded generator is consulted exactly once per inter-host
//! transmission step, and only when the scenario's loss probability is
//! positive. Lossless runs are bit-identical across seeds; lossy runs
//! are bit-identical for the same seed.
//!
//! # Decision rounds
//!
//! Hosts close windows in lockstep, but interaction-localization
//! decision rounds rotate across hosts: after every `repetitions`-th
//! window close the next host in ascending id order runs one decision
//! round. Mirrored workloads on synchronized timers would otherwise
//! propose symmetric swaps forever; rotation models hosts whose timers
//! are not phase-locked while keeping the run reproducible.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::distribution::{grouping_pass, overload_check, ranked_targets, select_group};
use crate::intermediary::{
    resolve_or_forward, FragmentSpace, LossReason, NameServerTable, Resolution,
};
use crate::localization::{
    analysis_phase, distribution_phase, interaction_phase, AdmissionDecision,
};
use crate::model::{
    AgentGroup, AgentId, AgentRecord, Envelope, ExtendedAddress, GroupId, Hop, HostId, Mediation,
    MsgId, SimTime, Target,
};
use crate::platform::{Activation, HostPlatform};
use crate::scenario::{Repeat, SendAction, ValidatedScenario};
use crate::trace::{
    BatchKind, CacheUpdateSource, GroupSnapshot, LedgerEntry, RunTrace, TraceBody, SCHEMA_VERSION,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("scenario horizon must be at least one tick")]
    HorizonZero,
    /// An internal invariant broke. Always a bug, never a scenario
    /// problem.
    #[error("engine invariant violated: {0}")]
    Internal(String),
}

/// The eight event kinds the engine schedules.
#[derive(Debug, Clone)]
enum Event {
    /// An agent executes one script step from its current host.
    AgentSend {
        agent: AgentId,
        step: usize,
        cycle_start: SimTime,
    },
    /// A host closes its observation window.
    WindowClose { host: HostId },
    /// A host compares occupancy against capacity.
    OverloadCheck { host: HostId },
    /// A proposal or poll reaches its target for admission control.
    ProposalRequest { id: u64 },
    /// The admission verdict reaches the proposing host.
    ProposalReply { id: u64, accepted: bool },
    /// An accepted transfer's agents land on the target.
    MigrationComplete { id: u64 },
    /// An envelope finishes one transmission step.
    EnvelopeArrival { msg: MsgId, host: HostId },
    /// A backed-off host re-checks whether it still needs to shed load.
    RetryDistribution { host: HostId },
}

#[derive(Debug)]
struct Scheduled {
    at: SimTime,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

/// Where an in-flight envelope is headed and why.
#[derive(Debug, Clone)]
enum Stage {
    /// Heading to the intermediary host for attribute matching.
    ToIntermediary,
    /// Matchmaker answer heading back to the asking host.
    LookupReply {
        receiver: AgentId,
        address: ExtendedAddress,
    },
    /// Payload heading for the receiver; each host it reaches
    /// re-resolves against its own records.
    Outbound { receiver: AgentId },
    /// No-match notice heading back to the sender's host.
    NoticeToSender,
}

#[derive(Debug)]
struct EnvelopeState {
    envelope: Envelope,
    stage: Stage,
    forwards: u32,
}

/// One outstanding migration negotiation (localization proposal or
/// load-distribution poll).
#[derive(Debug)]
struct PendingTransfer {
    kind: BatchKind,
    source: HostId,
    target: HostId,
    /// Agent set frozen when the transfer was proposed; checked for
    /// staleness before anything moves.
    agents: BTreeSet<AgentId>,
    group: Option<GroupId>,
    /// Fallback targets still unpolled (group transfers only).
    remaining: Vec<HostId>,
    attempt: u32,
}

struct World<'s> {
    sc: &'s ValidatedScenario,
    host_ids: Vec<HostId>,
    agents: BTreeMap<AgentId, AgentRecord>,
    hosts: BTreeMap<HostId, HostPlatform>,
    name_server: NameServerTable,
    space: FragmentSpace,
    rng: ChaCha8Rng,
    queue: BinaryHeap<Reverse<Scheduled>>,
    trace: RunTrace,
    in_flight: BTreeMap<MsgId, EnvelopeState>,
    transfers: BTreeMap<u64, PendingTransfer>,
    next_seq: u64,
    next_msg: u64,
    next_transfer: u64,
    next_group: u64,
    now: SimTime,
    cur_seq: u64,
}

/// Simulate `scenario` under `seed` and return the full record trace.
pub fn run(scenario: &ValidatedScenario, seed: u64) -> Result<RunTrace, EngineError> {
    if scenario.horizon == 0 {
        return Err(EngineError::HorizonZero);
    }
    let mut world = World::new(scenario, seed);
    world.init();
    while let Some(Reverse(next)) = world.queue.pop() {
        if next.at > scenario.horizon {
            break;
        }
        world.now = next.at;
        world.cur_seq = next.seq;
        world.handle(next.event)?;
    }
    Ok(world.trace)
}

impl<'s> World<'s> {
    fn new(sc: &'s ValidatedScenario, seed: u64) -> Self {
        let initial: Vec<ExtendedAddress> = sc
            .agents
            .iter()
            .map(|a| ExtendedAddress::initial(a.id, a.host))
            .collect();
        let mut agents = BTreeMap::new();
        for spec in &sc.agents {
            agents.insert(
                spec.id,
                AgentRecord {
                    id: spec.id,
                    address: ExtendedAddress::initial(spec.id, spec.host),
                    attributes: spec.attributes.clone(),
                    script: spec.script,
                    local_group: None,
                },
            );
        }
        let mut hosts = BTreeMap::new();
        for h in &sc.hosts {
            hosts.insert(
                h.id,
                HostPlatform::new(
                    h.id,
                    h.capacity,
                    sc.algorithms.window,
                    sc.algorithms.d,
                    sc.algorithms.delta,
                    initial.iter().copied(),
                ),
            );
        }
        for spec in &sc.agents {
            hosts
                .get_mut(&spec.host)
                .expect("validated host reference")
                .residents
                .insert(spec.id);
        }
        World {
            sc,
            host_ids: sc.host_ids(),
            agents,
            hosts,
            name_server: NameServerTable::new(initial),
            space: FragmentSpace::new(sc.intermediary_host),
            rng: ChaCha8Rng::seed_from_u64(seed),
            queue: BinaryHeap::new(),
            trace: RunTrace::default(),
            in_flight: BTreeMap::new(),
            transfers: BTreeMap::new(),
            next_seq: 1,
            next_msg: 0,
            next_transfer: 0,
            next_group: 1,
            now: 0,
            cur_seq: 0,
        }
    }

    fn init(&mut self) {
        self.trace.push(
            0,
            0,
            TraceBody::Header {
                schema_version: SCHEMA_VERSION,
                hosts: self.hosts.len() as u32,
                agents: self.agents.len() as u32,
                window: self.sc.algorithms.window,
                horizon: self.sc.horizon,
            },
        );
        // Agents with attributes publish a description fragment before
        // anything else happens.
        for (&id, record) in &self.agents {
            if record.attributes.is_empty() {
                continue;
            }
            self.space.register(record, 0);
            self.trace.push(
                0,
                0,
                TraceBody::FragmentRegistered {
                    agent: id,
                    host: record.address.current_host,
                    version: record.address.version,
                },
            );
        }
        // All window closes and overload checks, horizon-wide, before
        // any agent event: this pins their ordering at boundary ticks.
        let window = self.sc.algorithms.window;
        let mut boundary = window;
        while boundary <= self.sc.horizon {
            for &host in &self.host_ids.clone() {
                self.schedule(boundary, Event::WindowClose { host });
            }
            for &host in &self.host_ids.clone() {
                self.schedule(boundary, Event::OverloadCheck { host });
            }
            boundary += window;
        }
        // First script step of every scripted agent.
        let firsts: Vec<(AgentId, u64)> = self
            .agents
            .values()
            .filter_map(|record| {
                let script = &self.sc.scripts[record.script?];
                let first = script.steps.first()?;
                Some((record.id, first.offset))
            })
            .collect();
        for (agent, offset) in firsts {
            self.schedule(
                offset,
                Event::AgentSend {
                    agent,
                    step: 0,
                    cycle_start: 0,
                },
            );
        }
    }

    fn schedule(&mut self, at: SimTime, event: Event) {
        if at > self.sc.horizon {
            return;
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Scheduled { at, seq, event }));
    }

    fn push(&mut self, body: TraceBody) {
        self.trace.push(self.now, self.cur_seq, body);
    }

    fn internal(msg: impl Into<String>) -> EngineError {
        EngineError::Internal(msg.into())
    }

    fn handle(&mut self, event: Event) -> Result<(), EngineError> {
        match event {
            Event::AgentSend {
                agent,
                step,
                cycle_start,
            } => self.agent_send(agent, step, cycle_start),
            Event::WindowClose { host } => self.window_close(host),
            Event::OverloadCheck { host } => self.overload_tick(host),
            Event::ProposalRequest { id } => self.proposal_request(id),
            Event::ProposalReply { id, accepted } => self.proposal_reply(id, accepted),
            Event::MigrationComplete { id } => self.migration_complete(id),
            Event::EnvelopeArrival { msg, host } => self.envelope_arrival(msg, host),
            Event::RetryDistribution { host } => self.retry_distribution(host),
        }
    }

    // -- messaging -------------------------------------------------------

    /// Count one send against the sender's current host, attributed to
    /// the receiver's current host (and group when co-located). Called
    /// at the instant the receiver becomes known to the platform.
    fn count_send(&mut self, sender: AgentId, receiver: AgentId) -> Result<(), EngineError> {
        let sender_host = self.agents[&sender].address.current_host;
        let receiver_host = self.agents[&receiver].address.current_host;
        let group = if receiver_host == sender_host {
            self.agents[&receiver].local_group
        } else {
            None
        };
        self.hosts
            .get_mut(&sender_host)
            .expect("sender host exists")
            .counts
            .record_send(sender, receiver_host, group, self.now)
            .map_err(|e| Self::internal(format!("send landed outside the open window: {e}")))
    }

    fn agent_send(
        &mut self,
        agent: AgentId,
        step: usize,
        cycle_start: SimTime,
    ) -> Result<(), EngineError> {
        let record = &self.agents[&agent];
        let script_idx = record
            .script
            .ok_or_else(|| Self::internal(format!("send scheduled for scriptless agent {agent}")))?;
        let script = &self.sc.scripts[script_idx];
        let spec = &script.steps[step];
        let origin = record.address.current_host;
        let payload = spec.payload;
        let action = spec.action.clone();

        self.next_msg += 1;
        let msg = MsgId(self.next_msg);
        let sent_at = self.now;
        let envelope = move |target: Target, mediation: Mediation| Envelope {
            msg_id: msg,
            sender: agent,
            target,
            payload_size: payload,
            sent_at,
            hops: Vec::new(),
            mediation,
        };

        match action {
            SendAction::Direct(receiver) => {
                self.count_send(agent, receiver)?;
                self.push(TraceBody::Send {
                    msg,
                    sender: agent,
                    origin,
                    mediation: Mediation::Direct,
                    payload,
                });
                let addressed = self.cached_address(origin, receiver)?;
                self.in_flight.insert(
                    msg,
                    EnvelopeState {
                        envelope: envelope(Target::Agent(receiver), Mediation::Direct),
                        stage: Stage::Outbound { receiver },
                        forwards: 0,
                    },
                );
                self.transmit(msg, origin, addressed.current_host);
            }
            SendAction::Broker(query) => {
                self.push(TraceBody::Send {
                    msg,
                    sender: agent,
                    origin,
                    mediation: Mediation::Broker,
                    payload,
                });
                let intermediary = self.space.host();
                self.in_flight.insert(
                    msg,
                    EnvelopeState {
                        envelope: envelope(Target::Query(query), Mediation::Broker),
                        stage: Stage::ToIntermediary,
                        forwards: 0,
                    },
                );
                self.transmit(msg, origin, intermediary);
            }
            SendAction::Matchmaker(query) => {
                let bound = self.hosts[&origin]
                    .query_bindings
                    .get(&query.canonical())
                    .copied();
                self.push(TraceBody::Send {
                    msg,
                    sender: agent,
                    origin,
                    mediation: Mediation::Matchmaker,
                    payload,
                });
                if let Some(receiver) = bound {
                    // Previously resolved query: skip the intermediary
                    // and send directly, exactly like a direct send.
                    self.count_send(agent, receiver)?;
                    let addressed = self.cached_address(origin, receiver)?;
                    self.in_flight.insert(
                        msg,
                        EnvelopeState {
                            envelope: envelope(Target::Query(query), Mediation::Matchmaker),
                            stage: Stage::Outbound { receiver },
                            forwards: 0,
                        },
                    );
                    self.transmit(msg, origin, addressed.current_host);
                } else {
                    let intermediary = self.space.host();
                    self.in_flight.insert(
                        msg,
                        EnvelopeState {
                            envelope: envelope(Target::Query(query), Mediation::Matchmaker),
                            stage: Stage::ToIntermediary,
                            forwards: 0,
                        },
                    );
                    self.transmit(msg, origin, intermediary);
                }
            }
        }

        // Schedule the next step of the script.
        let next = step + 1;
        if next < script.steps.len() {
            self.schedule(
                cycle_start + script.steps[next].offset,
                Event::AgentSend {
                    agent,
                    step: next,
                    cycle_start,
                },
            );
        } else if script.repeat == Repeat::Loop {
            let last = script.steps.last().expect("non-empty script").offset;
            let new_cycle = cycle_start + last + 1;
            self.schedule(
                new_cycle + script.steps[0].offset,
                Event::AgentSend {
                    agent,
                    step: 0,
                    cycle_start: new_cycle,
                },
            );
        }
        Ok(())
    }

    fn cached_address(
        &self,
        host: HostId,
        receiver: AgentId,
    ) -> Result<ExtendedAddress, EngineError> {
        self.hosts[&host]
            .cache
            .get(receiver)
            .copied()
            .ok_or_else(|| Self::internal(format!("host {host} has no cache entry for {receiver}")))
    }

    /// One transmission step. Draws the loss coin only for inter-host
    /// steps on lossy networks, so lossless traces never touch the
    /// generator.
    fn transmit(&mut self, msg: MsgId, from: HostId, to: HostId) {
        let payload = self.in_flight[&msg].envelope.payload_size;
        let latency = if from == to {
            self.sc.network.intra_host_latency
        } else {
            self.sc.network.inter_host_latency
        };
        let arrives = self.now + latency;
        let loss = self.sc.network.loss_probability;
        let dropped = from != to && loss > 0.0 && self.rng.gen::<f64>() < loss;
        self.push(TraceBody::Transmission {
            msg,
            from,
            to,
            arrives,
            payload,
            dropped,
        });
        if dropped {
            self.push(TraceBody::Lost {
                msg,
                reason: LossReason::NetworkDrop,
            });
            self.in_flight.remove(&msg);
        } else {
            self.schedule(arrives, Event::EnvelopeArrival { msg, host: to });
        }
    }

    fn envelope_arrival(&mut self, msg: MsgId, host: HostId) -> Result<(), EngineError> {
        let state = self
            .in_flight
            .get_mut(&msg)
            .ok_or_else(|| Self::internal(format!("arrival for unknown message {msg}")))?;
        state.envelope.hops.push(Hop { host, at: self.now });
        let stage = state.stage.clone();
        match stage {
            Stage::ToIntermediary => self.arrive_at_intermediary(msg, host),
            Stage::LookupReply { receiver, address } => {
                self.arrive_lookup_reply(msg, host, receiver, address)
            }
            Stage::Outbound { receiver, .. } => self.arrive_outbound(msg, host, receiver),
            Stage::NoticeToSender => {
                let sender = self.in_flight[&msg].envelope.sender;
                self.push(TraceBody::NoMatch { msg, sender });
                self.in_flight.remove(&msg);
                Ok(())
            }
        }
    }

    fn arrive_at_intermediary(&mut self, msg: MsgId, host: HostId) -> Result<(), EngineError> {
        let (sender, mediation, query) = {
            let envelope = &self.in_flight[&msg].envelope;
            let query = match &envelope.target {
                Target::Query(q) => q.clone(),
                Target::Agent(_) => {
                    return Err(Self::internal(format!(
                        "directly addressed message {msg} routed to the intermediary"
                    )))
                }
            };
            (envelope.sender, envelope.mediation, query)
        };
        match self.space.first_match(&query).cloned() {
            None => {
                self.push(TraceBody::IntermediaryMatch { msg, matched: None });
                // Send a notice back to wherever the sender lives now.
                let sender_host = self.agents[&sender].address.current_host;
                self.in_flight.get_mut(&msg).expect("in flight").stage = Stage::NoticeToSender;
                self.transmit(msg, host, sender_host);
            }
            Some(fragment) => {
                self.push(TraceBody::IntermediaryMatch {
                    msg,
                    matched: Some(fragment.owner),
                });
                // The receiver is known from this instant on: the send
                // counts now, against the sender's current host.
                self.count_send(sender, fragment.owner)?;
                match mediation {
                    Mediation::Broker => {
                        self.in_flight.get_mut(&msg).expect("in flight").stage =
                            Stage::Outbound {
                                receiver: fragment.owner,
                            };
                        self.transmit(msg, host, fragment.address.current_host);
                    }
                    Mediation::Matchmaker => {
                        let sender_host = self.agents[&sender].address.current_host;
                        self.in_flight.get_mut(&msg).expect("in flight").stage =
                            Stage::LookupReply {
                                receiver: fragment.owner,
                                address: fragment.address,
                            };
                        self.transmit(msg, host, sender_host);
                    }
                    Mediation::Direct => {
                        return Err(Self::internal(format!(
                            "direct message {msg} asked for a match"
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    fn arrive_lookup_reply(
        &mut self,
        msg: MsgId,
        host: HostId,
        receiver: AgentId,
        address: ExtendedAddress,
    ) -> Result<(), EngineError> {
        let updated = self
            .hosts
            .get_mut(&host)
            .expect("host exists")
            .cache
            .insert_if_newer(address);
        if updated {
            self.push(TraceBody::CacheUpdated {
                host,
                agent: receiver,
                version: address.version,
                via: CacheUpdateSource::MatchmakerReply,
            });
        }
        let canonical = match &self.in_flight[&msg].envelope.target {
            Target::Query(q) => q.canonical(),
            Target::Agent(_) => {
                return Err(Self::internal(format!(
                    "lookup reply for directly addressed message {msg}"
                )))
            }
        };
        self.hosts
            .get_mut(&host)
            .expect("host exists")
            .query_bindings
            .insert(canonical, receiver);
        self.in_flight.get_mut(&msg).expect("in flight").stage =
            Stage::Outbound { receiver };
        self.transmit(msg, host, address.current_host);
        Ok(())
    }

    fn arrive_outbound(
        &mut self,
        msg: MsgId,
        host: HostId,
        receiver: AgentId,
    ) -> Result<(), EngineError> {
        let resident = self.hosts[&host].residents.contains(&receiver);
        let known = self.hosts[&host].cache.get(receiver).copied();
        let forwards = self.in_flight[&msg].forwards;
        match resolve_or_forward(
            host,
            resident,
            known.as_ref(),
            forwards,
            self.sc.algorithms.max_forwards,
        ) {
            Resolution::Deliver => {
                let state = self.in_flight.remove(&msg).expect("in flight");
                self.push(TraceBody::Delivered {
                    msg,
                    receiver,
                    host,
                    sent_at: state.envelope.sent_at,
                    forwards: state.forwards,
                });
                if state.forwards > 0 {
                    // The sender's host addressed a stale location; give
                    // it the fresh address along with the delivery
                    // confirmation so the next send goes straight there.
                    let sender_host = self.agents[&state.envelope.sender].address.current_host;
                    let fresh = self.agents[&receiver].address;
                    let changed = self
                        .hosts
                        .get_mut(&sender_host)
                        .expect("host exists")
                        .cache
                        .insert_if_newer(fresh);
                    if changed {
                        self.push(TraceBody::CacheUpdated {
                            host: sender_host,
                            agent: receiver,
                            version: fresh.version,
                            via: CacheUpdateSource::Piggyback,
                        });
                    }
                }
            }
            Resolution::Forward(address) => {
                {
                    let state = self.in_flight.get_mut(&msg).expect("in flight");
                    state.forwards += 1;
                }
                self.push(TraceBody::Forwarded {
                    msg,
                    host,
                    toward: address.current_host,
                    version: address.version,
                });
                self.transmit(msg, host, address.current_host);
            }
            Resolution::Lose(reason) => {
                self.push(TraceBody::Lost { msg, reason });
                self.in_flight.remove(&msg);
            }
        }
        Ok(())
    }

    // -- periodic machinery ----------------------------------------------

    fn window_close(&mut self, host_id: HostId) -> Result<(), EngineError> {
        let residents: BTreeSet<AgentId> = self.hosts[&host_id].residents.clone();
        let host_ids = self.host_ids.clone();

        // 1. An active monitoring pass folds group-level counts and
        //    regroups before the window's counts disappear.
        if let Some(Activation::Monitoring { passes_done }) = self.hosts[&host_id].activation {
            let (round, snapshot, membership) = {
                let h = self.hosts.get_mut(&host_id).expect("host exists");
                let group_ids = h.register.group_ids();
                for &agent in &residents {
                    h.ledger
                        .update_group_dependency(&h.counts, agent, &group_ids, host_id);
                }
                let membership = grouping_pass(&mut h.register, &mut h.ledger, &residents);
                let snapshot: Vec<GroupSnapshot> = h
                    .register
                    .groups()
                    .map(|g| GroupSnapshot {
                        id: g.id,
                        members: g.members.iter().copied().collect(),
                    })
                    .collect();
                (h.register.round, snapshot, membership)
            };
            for (agent, gid) in &membership {
                if let Some(record) = self.agents.get_mut(agent) {
                    record.local_group = Some(*gid);
                }
            }
            self.push(TraceBody::Grouping {
                host: host_id,
                round,
                groups: snapshot,
            });
            let done = passes_done + 1;
            if done >= self.sc.algorithms.grouping_repetitions {
                self.start_group_poll(host_id, &host_ids)?;
            } else {
                self.hosts.get_mut(&host_id).expect("host exists").activation =
                    Some(Activation::Monitoring { passes_done: done });
            }
        }

        // 2. Fold host-level counts for every resident.
        {
            let h = self.hosts.get_mut(&host_id).expect("host exists");
            analysis_phase(&mut h.ledger, &h.counts, &residents, &host_ids);
        }

        // 3. Export the smoothed table while it is fresh.
        let entries: Vec<LedgerEntry> = {
            let ledger = &self.hosts[&host_id].ledger;
            ledger
                .host_table()
                .iter()
                .flat_map(|(&agent, row)| {
                    row.iter().map(move |(&host, &value)| LedgerEntry {
                        agent,
                        host,
                        value,
                    })
                })
                .collect()
        };
        if !entries.is_empty() {
            self.push(TraceBody::LedgerSnapshot {
                host: host_id,
                entries,
            });
        }

        let index = self.hosts[&host_id].windows_closed;
        self.push(TraceBody::WindowClosed {
            host: host_id,
            index,
        });
        self.hosts.get_mut(&host_id).expect("host exists").windows_closed += 1;

        // 4. Rotating localization decision round.
        if self.sc.algorithms.localization_enabled {
            let k = self.hosts[&host_id].windows_closed;
            let reps = u64::from(self.sc.algorithms.repetitions);
            if k % reps == 0 {
                let round = k / reps;
                let chosen = host_ids[((round - 1) % host_ids.len() as u64) as usize];
                if chosen == host_id {
                    let proposals = {
                        let h = &self.hosts[&host_id];
                        distribution_phase(
                            &h.ledger,
                            &residents,
                            host_id,
                            &host_ids,
                            self.sc.algorithms.beta,
                            self.now,
                        )
                    };
                    for proposal in proposals {
                        self.next_transfer += 1;
                        let id = self.next_transfer;
                        let agents: Vec<AgentId> = proposal.agents.iter().copied().collect();
                        self.transfers.insert(
                            id,
                            PendingTransfer {
                                kind: BatchKind::Individual,
                                source: host_id,
                                target: proposal.target,
                                agents: proposal.agents,
                                group: None,
                                remaining: Vec::new(),
                                attempt: 0,
                            },
                        );
                        self.push(TraceBody::Proposal {
                            id,
                            source: host_id,
                            target: proposal.target,
                            agents,
                        });
                        self.schedule(
                            self.now + self.sc.network.inter_host_latency,
                            Event::ProposalRequest { id },
                        );
                    }
                }
            }
        }

        // 5. Open the next window.
        self.hosts
            .get_mut(&host_id)
            .expect("host exists")
            .counts
            .advance();
        Ok(())
    }

    /// A monitoring activation finished its passes: pick the group to
    /// shed and poll the first-ranked target.
    fn start_group_poll(
        &mut self,
        host_id: HostId,
        host_ids: &[HostId],
    ) -> Result<(), EngineError> {
        let selected = {
            let h = &self.hosts[&host_id];
            match select_group(&h.register, &h.ledger, host_id, host_ids) {
                Err(_) => None,
                Ok(gid) => {
                    let group = h.register.get(gid).expect("selected group exists");
                    let ranked = ranked_targets(group, &h.ledger, host_id, host_ids);
                    ranked
                        .split_first()
                        .map(|(&first, rest)| (gid, group.members.clone(), first, rest.to_vec()))
                }
            }
        };
        match selected {
            None => {
                // Nothing to offer or nowhere to send it; stand down.
                self.hosts.get_mut(&host_id).expect("host exists").activation = None;
            }
            Some((gid, members, target, remaining)) => {
                self.next_transfer += 1;
                let id = self.next_transfer;
                let agents: Vec<AgentId> = members.iter().copied().collect();
                self.transfers.insert(
                    id,
                    PendingTransfer {
                        kind: BatchKind::Group,
                        source: host_id,
                        target,
                        agents: members,
                        group: Some(gid),
                        remaining,
                        attempt: 0,
                    },
                );
                self.push(TraceBody::Poll {
                    id,
                    group: gid,
                    source: host_id,
                    target,
                    agents,
                    attempt: 0,
                });
                self.schedule(
                    self.now + self.sc.network.inter_host_latency,
                    Event::ProposalRequest { id },
                );
                self.hosts.get_mut(&host_id).expect("host exists").activation =
                    Some(Activation::Negotiating { group: gid });
            }
        }
        Ok(())
    }

    fn overload_tick(&mut self, host_id: HostId) -> Result<(), EngineError> {
        let (occupancy, capacity) = {
            let h = &self.hosts[&host_id];
            (h.occupancy(), h.capacity)
        };
        let overloaded = overload_check(occupancy, capacity);
        self.push(TraceBody::OverloadCheck {
            host: host_id,
            occupancy: occupancy as u32,
            capacity,
            overloaded,
        });
        if !overloaded {
            return Ok(());
        }
        self.push(TraceBody::Overload {
            host: host_id,
            occupancy: occupancy as u32,
            capacity,
        });
        if self.sc.algorithms.load_distribution_enabled
            && self.hosts[&host_id].activation.is_none()
        {
            self.start_monitoring(host_id);
        }
        Ok(())
    }

    /// Seed (or re-seed) the group register from the current residents
    /// and enter the monitoring stage.
    fn start_monitoring(&mut self, host_id: HostId) {
        let membership = {
            let h = self.hosts.get_mut(&host_id).expect("host exists");
            let residents = h.residents.clone();
            h.register.seed(&residents, &mut self.next_group);
            h.activation = Some(Activation::Monitoring { passes_done: 0 });
            h.register.membership().clone()
        };
        for (agent, gid) in membership {
            if let Some(record) = self.agents.get_mut(&agent) {
                record.local_group = Some(gid);
            }
        }
    }

    // -- migration pipelines -----------------------------------------------

    fn proposal_request(&mut self, id: u64) -> Result<(), EngineError> {
        let (target, batch) = {
            let t = self
                .transfers
                .get(&id)
                .ok_or_else(|| Self::internal(format!("admission check for unknown transfer {id}")))?;
            (t.target, t.agents.len())
        };
        let decision = {
            let h = &self.hosts[&target];
            interaction_phase(h.occupancy(), h.reserved, h.capacity, batch)
        };
        let (accepted, shortfall) = match decision {
            AdmissionDecision::Accept => {
                self.hosts.get_mut(&target).expect("host exists").reserved += batch as u32;
                (true, None)
            }
            AdmissionDecision::Reject { shortfall } => (false, Some(shortfall)),
        };
        self.push(TraceBody::Admission {
            id,
            target,
            accepted,
            shortfall,
        });
        self.schedule(
            self.now + self.sc.network.inter_host_latency,
            Event::ProposalReply { id, accepted },
        );
        Ok(())
    }

    fn proposal_reply(&mut self, id: u64, accepted: bool) -> Result<(), EngineError> {
        if accepted {
            self.schedule(
                self.now + self.sc.network.inter_host_latency,
                Event::MigrationComplete { id },
            );
            return Ok(());
        }
        let kind = self
            .transfers
            .get(&id)
            .map(|t| t.kind)
            .ok_or_else(|| Self::internal(format!("rejection for unknown transfer {id}")))?;
        match kind {
            BatchKind::Individual => {
                // Localization proposals are one-shot: the next decision
                // round re-evaluates from fresher data anyway.
                self.transfers.remove(&id);
            }
            BatchKind::Group => {
                let next = {
                    let t = self.transfers.get_mut(&id).expect("checked above");
                    t.attempt += 1;
                    if t.remaining.is_empty() {
                        None
                    } else {
                        let target = t.remaining.remove(0);
                        t.target = target;
                        Some((
                            target,
                            t.group.expect("group transfers carry a group"),
                            t.source,
                            t.agents.iter().copied().collect::<Vec<_>>(),
                            t.attempt,
                        ))
                    }
                };
                match next {
                    Some((target, gid, source, agents, attempt)) => {
                        self.push(TraceBody::Poll {
                            id,
                            group: gid,
                            source,
                            target,
                            agents,
                            attempt,
                        });
                        self.schedule(
                            self.now + self.sc.network.inter_host_latency,
                            Event::ProposalRequest { id },
                        );
                    }
                    None => {
                        let (source, gid) = {
                            let t = &self.transfers[&id];
                            (t.source, t.group.expect("group transfer"))
                        };
                        self.transfers.remove(&id);
                        let retry_at = self.now
                            + u64::from(self.sc.algorithms.backoff_windows)
                                * self.sc.algorithms.window;
                        self.push(TraceBody::AllRejected {
                            host: source,
                            group: gid,
                            retry_at,
                        });
                        self.hosts.get_mut(&source).expect("host exists").activation =
                            Some(Activation::BackingOff);
                        self.schedule(retry_at, Event::RetryDistribution { host: source });
                    }
                }
            }
        }
        Ok(())
    }

    fn migration_complete(&mut self, id: u64) -> Result<(), EngineError> {
        let transfer = self
            .transfers
            .remove(&id)
            .ok_or_else(|| Self::internal(format!("completion for unknown transfer {id}")))?;
        let n = transfer.agents.len() as u32;

        // The world may have moved on since the proposal was frozen;
        // a stale transfer moves nobody and releases its reservation.
        let stale = {
            let source = &self.hosts[&transfer.source];
            let missing = transfer
                .agents
                .iter()
                .find(|a| !source.residents.contains(a));
            match missing {
                Some(agent) => Some(format!(
                    "agent {agent} no longer resides on host {}",
                    transfer.source
                )),
                None => match transfer.kind {
                    BatchKind::Group => {
                        let gid = transfer.group.expect("group transfer");
                        match source.register.get(gid) {
                            Some(group) if group.members == transfer.agents => None,
                            _ => Some(format!("group {gid} changed since it was offered")),
                        }
                    }
                    BatchKind::Individual => None,
                },
            }
        };
        if let Some(reason) = stale {
            self.hosts.get_mut(&transfer.target).expect("host exists").reserved -= n;
            if transfer.kind == BatchKind::Group {
                self.hosts.get_mut(&transfer.source).expect("host exists").activation = None;
            }
            self.push(TraceBody::MigrationAborted { id, reason });
            return Ok(());
        }

        // Group transfers move their register entry wholesale.
        if transfer.kind == BatchKind::Group {
            let gid = transfer.group.expect("group transfer");
            let group = self
                .hosts
                .get_mut(&transfer.source)
                .expect("host exists")
                .register
                .remove_group(gid)
                .expect("staleness check passed");
            self.hosts
                .get_mut(&transfer.target)
                .expect("host exists")
                .register
                .insert_group(AgentGroup {
                    id: gid,
                    host: transfer.target,
                    members: group.members,
                });
        }

        for &agent in &transfer.agents {
            {
                let source = self.hosts.get_mut(&transfer.source).expect("host exists");
                source.residents.remove(&agent);
                source.ledger.remove_agent(agent);
                if transfer.kind == BatchKind::Individual {
                    source.register.remove_agent(agent);
                }
            }
            let new_address = {
                let record = self.agents.get_mut(&agent).expect("agent exists");
                let new_address = record.address.migrated(transfer.target);
                record.address = new_address;
                record.local_group = match transfer.kind {
                    BatchKind::Group => transfer.group,
                    BatchKind::Individual => None,
                };
                new_address
            };
            // Synchronous address refresh: authority first, then the
            // intermediary's fragment, then forwarding records on both
            // endpoint hosts.
            self.name_server
                .update_location(new_address)
                .map_err(|e| Self::internal(format!("address version went backwards: {e}")))?;
            self.space.refresh_address(agent, new_address);
            self.hosts
                .get_mut(&transfer.source)
                .expect("host exists")
                .cache
                .insert_if_newer(new_address);
            self.hosts
                .get_mut(&transfer.target)
                .expect("host exists")
                .cache
                .insert_if_newer(new_address);
            self.hosts
                .get_mut(&transfer.target)
                .expect("host exists")
                .residents
                .insert(agent);
            self.push(TraceBody::Migration {
                id,
                agent,
                from: transfer.source,
                to: transfer.target,
                version: new_address.version,
                batch: transfer.kind,
                group: transfer.group,
            });
        }
        self.hosts.get_mut(&transfer.target).expect("host exists").reserved -= n;
        if transfer.kind == BatchKind::Group {
            self.hosts.get_mut(&transfer.source).expect("host exists").activation = None;
        }
        Ok(())
    }

    fn retry_distribution(&mut self, host_id: HostId) -> Result<(), EngineError> {
        if !matches!(
            self.hosts[&host_id].activation,
            Some(Activation::BackingOff)
        ) {
            return Ok(());
        }
        let still_overloaded = {
            let h = &self.hosts[&host_id];
            overload_check(h.occupancy(), h.capacity)
        };
        if still_overloaded {
            self.start_monitoring(host_id);
        } else {
            self.hosts.get_mut(&host_id).expect("host exists").activation = None;
        }
        self.push(TraceBody::Retry {
            host: host_id,
            resumed: still_overloaded,
        });
        Ok(())
    }
}
