//! Synchronous round loop, delay queue and trace recording.

use std::collections::{BTreeMap, BTreeSet};

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algorithms::{classify_mode, departure_payload, step_qaiod, step_qapod, AlgorithmKind, Mode};
use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::metrics::{
    active_average, check_consensus, epsilon, expected_mass, historical_average, HistoricalSet,
};
use crate::protocol::{
    arrival_init, MassPair, NodeRecord, StateTriple, TransmissionMessage,
};
use crate::topology::{
    generate_membership_schedule, generate_topology_sequence, node_sets_at, DepartureKnowledge,
    MembershipSchedule, NodeId, TopologySequence,
};

/// What a random stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    InitialValues,
    Schedule,
    Topology,
    Protocol(NodeId),
    Delay(NodeId),
}

impl Purpose {
    fn code(self) -> u64 {
        let (tag, node) = match self {
            Purpose::InitialValues => (1, 0),
            Purpose::Schedule => (2, 0),
            Purpose::Topology => (3, 0),
            Purpose::Protocol(v) => (4, v.0),
            Purpose::Delay(v) => (5, v.0),
        };
        (tag << 32) | u64::from(node)
    }
}

/// Independent ChaCha streams derived from one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStreams {
    master: u64,
}

impl RngStreams {
    pub fn new(master: u64) -> Self {
        RngStreams { master }
    }

    pub fn stream(&self, purpose: Purpose) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(purpose.code());
        rng
    }
}

/// Messages waiting for their delivery step.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayQueue {
    pending: BTreeMap<usize, Vec<TransmissionMessage>>,
}

impl DelayQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, msg: TransmissionMessage) {
        self.pending.entry(msg.deliver_step).or_default().push(msg);
    }

    pub fn len(&self) -> usize {
        self.pending.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    /// Everything still queued, in delivery order.
    pub fn pending(&self) -> impl Iterator<Item = &TransmissionMessage> {
        self.pending.values().flatten()
    }

    /// Removes the messages due at `k`, grouped by receiver. Each receiver must
    /// be in `active`.
    pub fn deliver_due(
        &mut self,
        k: usize,
        active: &BTreeSet<NodeId>,
    ) -> Result<BTreeMap<NodeId, Vec<TransmissionMessage>>> {
        let mut out: BTreeMap<NodeId, Vec<TransmissionMessage>> = BTreeMap::new();
        let Some(due) = self.pending.get(&k) else {
            return Ok(out);
        };
        if let Some(m) = due.iter().find(|m| !active.contains(&m.to)) {
            return Err(Error::InactiveReceiver { step: k, node: m.to });
        }
        for m in self.pending.remove(&k).unwrap_or_default() {
            out.entry(m.to).or_default().push(m);
        }
        Ok(out)
    }
}

/// Uniform delay in `0..=tau_bar`.
pub fn draw_processing_delay<R: Rng + ?Sized>(tau_bar: u32, rng: &mut R) -> usize {
    rng.gen_range(0..=tau_bar) as usize
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSnapshot {
    pub id: NodeId,
    pub mass: MassPair,
    pub state: StateTriple,
    pub mode: Mode,
}

/// State of the network at the start of round `k`, and what happened in it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    /// Active nodes before churn of step `k` is applied.
    pub nodes: Vec<NodeSnapshot>,
    /// Messages emitted earlier and not yet merged (`deliver_step >= k`).
    pub in_flight: Vec<TransmissionMessage>,
    pub delivered: Vec<TransmissionMessage>,
    pub emitted: Vec<TransmissionMessage>,
    pub q_target: Ratio<i64>,
    pub epsilon: i64,
    pub consensus: bool,
    pub mass_sum: MassPair,
    pub expected: MassPair,
}

/// A departure that found no qualifying out-neighbor; its payload is lost.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationRecord {
    pub step: usize,
    pub node: NodeId,
    pub dropped: MassPair,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub algorithm: AlgorithmKind,
    pub seed: u64,
    pub x: Vec<i64>,
    pub tau_bar: Vec<u32>,
    pub schedule: MembershipSchedule,
    pub topology: TopologySequence,
    pub steps: Vec<StepRecord>,
    pub violations: Vec<ViolationRecord>,
}

impl Trace {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Everything a run needs besides the algorithm and seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimulationInput {
    pub x: Vec<i64>,
    pub schedule: MembershipSchedule,
    pub topology: TopologySequence,
    pub knowledge: DepartureKnowledge,
}

impl SimulationInput {
    /// Draws initial values, schedule and topology for `cfg` from `seed`.
    pub fn generate(cfg: &ScenarioConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let streams = RngStreams::new(seed);
        let mut values = streams.stream(Purpose::InitialValues);
        let x = (0..cfg.n_total)
            .map(|_| values.gen_range(cfg.initial_value_min..=cfg.initial_value_max))
            .collect();
        let schedule = generate_membership_schedule(cfg, &mut streams.stream(Purpose::Schedule))?;
        let knowledge = DepartureKnowledge::exact(&schedule, cfg.tau_bars())?;
        let topology =
            generate_topology_sequence(&schedule, cfg, &knowledge, &mut streams.stream(Purpose::Topology))?;
        Ok(SimulationInput {
            x,
            schedule,
            topology,
            knowledge,
        })
    }
}

/// Generates the scenario for `seed` and simulates it with `kind`.
pub fn run(cfg: &ScenarioConfig, kind: AlgorithmKind, seed: u64) -> Result<Trace> {
    let cfg = cfg.clone().with_algorithm(kind);
    let input = SimulationInput::generate(&cfg, seed)?;
    simulate(&input, kind, seed)
}

/// Runs every round of `input` under `kind`.
///
/// Nodes emit in the same round against the masses they hold at `k`;
/// undelayed messages are merged into their receivers for `k + 1` once every
/// node has emitted, so iteration order never matters.
pub fn simulate(input: &SimulationInput, kind: AlgorithmKind, seed: u64) -> Result<Trace> {
    let order: Vec<NodeId> = (0..input.schedule.n_total()).map(NodeId::from).collect();
    simulate_in_order(input, kind, seed, &order)
}

/// [`simulate`] with nodes visited in `order` within each round. `order`
/// must be a permutation of all node ids; the trace does not depend on it.
pub fn simulate_in_order(
    input: &SimulationInput,
    kind: AlgorithmKind,
    seed: u64,
    order: &[NodeId],
) -> Result<Trace> {
    let schedule = &input.schedule;
    let horizon = schedule.horizon();
    let n = schedule.n_total();
    let mut sorted = order.to_vec();
    sorted.sort();
    if sorted.iter().copied().ne((0..n).map(NodeId::from)) {
        return Err(Error::InvalidConfig("visit order is not a permutation of the nodes".into()));
    }
    if input.x.len() != n {
        return Err(Error::InvalidConfig(format!("{} initial values for {n} nodes", input.x.len())));
    }
    input.topology.validate(schedule)?;
    let target = kind.departure_target();

    let streams = RngStreams::new(seed);
    let mut protocol_rng: Vec<ChaCha8Rng> = (0..n)
        .map(|i| streams.stream(Purpose::Protocol(NodeId::from(i))))
        .collect();
    let mut delay_rng: Vec<ChaCha8Rng> = (0..n)
        .map(|i| streams.stream(Purpose::Delay(NodeId::from(i))))
        .collect();

    let mut nodes: Vec<NodeRecord> = (0..n)
        .map(|i| NodeRecord::new(NodeId::from(i), input.x[i]))
        .collect();
    for &v in schedule.active(0) {
        let node = &mut nodes[v.index()];
        node.eta = false;
        node.nu = 0;
    }

    let mut queue = DelayQueue::new();
    let mut historical = HistoricalSet::new();
    let mut steps = Vec::with_capacity(horizon);
    let mut violations = Vec::new();

    for k in 0..horizon {
        let active = schedule.active(k);
        let next_active = schedule.next_active(k);
        historical.extend(active);

        let (q_target, expected) = if kind.is_indefinitely_open() {
            (
                historical_average(&input.x, &historical)?,
                expected_mass(&input.x, historical.members()),
            )
        } else {
            (active_average(&input.x, active)?, expected_mass(&input.x, active))
        };
        let in_flight: Vec<TransmissionMessage> = queue.pending().copied().collect();
        let mass_sum = active.iter().map(|v| nodes[v.index()].mass).sum::<MassPair>()
            + in_flight.iter().map(|m| m.payload()).sum::<MassPair>();
        let eps = epsilon(active.iter().map(|v| nodes[v.index()].mass), q_target);
        let consensus = check_consensus(active.iter().map(|v| nodes[v.index()].state.q_s), q_target);

        let sets = node_sets_at(schedule, &input.knowledge, k);
        let graph = input.topology.at(k);
        let delivered = queue.deliver_due(k, active)?;

        let mut snapshots = Vec::with_capacity(active.len());
        let mut next: BTreeMap<NodeId, NodeRecord> = BTreeMap::new();
        let mut emitted: Vec<TransmissionMessage> = Vec::new();
        for &v in order {
            let i = v.index();
            let mode = classify_mode(kind, v, k, &sets)?;
            let node = &nodes[i];
            if active.contains(&v) {
                snapshots.push(NodeSnapshot {
                    id: v,
                    mass: node.mass,
                    state: node.state,
                    mode,
                });
            }
            let inbox: Vec<MassPair> = delivered
                .get(&v)
                .map(|ms| ms.iter().map(TransmissionMessage::payload).collect())
                .unwrap_or_default();
            let out_set = graph.out_neighbors_in(v, sets.departure_targets(target));
            let rng = &mut protocol_rng[i];

            let result = match (kind, mode) {
                (_, Mode::Inactive) => continue,
                (AlgorithmKind::Qaod, Mode::Arriving) => {
                    let (mass, state) = arrival_init(node.x);
                    Ok((NodeRecord { mass, state, ..node.clone() }, Vec::new()))
                }
                (AlgorithmKind::Qaod, Mode::Remaining) => {
                    Ok(crate::algorithms::step_remaining_qaod(node, &out_set, &inbox, k, rng))
                }
                (AlgorithmKind::Qaod, Mode::Departing) => {
                    crate::algorithms::step_departing_qaod(node, &out_set, &inbox, k, rng)
                        .map(|m| (node.clone(), vec![m]))
                }
                (AlgorithmKind::Qapod, _) => {
                    let delay = if mode == Mode::LongTermRemaining {
                        draw_processing_delay(input.knowledge.tau_bar(v), &mut delay_rng[i])
                    } else {
                        0
                    };
                    step_qapod(node, mode, &out_set, &inbox, k, delay, rng)
                }
                (AlgorithmKind::Qaiod, _) => step_qaiod(node, mode, &out_set, &inbox, k, rng),
                (AlgorithmKind::Qaod, _) => Err(Error::ScheduleCorruption { step: k, node: v }),
            };

            let (record, msgs) = match result {
                Ok(ok) => ok,
                Err(Error::DepartureConditionViolated) => {
                    violations.push(ViolationRecord {
                        step: k,
                        node: v,
                        dropped: departure_payload(kind, node, &inbox),
                    });
                    (node.clone(), Vec::new())
                }
                Err(e) => return Err(e),
            };
            emitted.extend(msgs);
            if mode == Mode::Departing {
                let mut gone = record;
                gone.mass = MassPair::ZERO;
                nodes[i] = gone;
            } else {
                next.insert(v, record);
            }
        }

        let emitted = sorted_messages(emitted);
        for m in &emitted {
            if m.deliver_step == k {
                let receiver = next
                    .get_mut(&m.to)
                    .filter(|_| next_active.contains(&m.to))
                    .ok_or(Error::InactiveReceiver { step: k, node: m.to })?;
                receiver.mass += m.payload();
            } else {
                queue.push(*m);
            }
        }
        for (v, record) in next {
            nodes[v.index()] = record;
        }

        snapshots.sort_by_key(|s| s.id);
        steps.push(StepRecord {
            k,
            nodes: snapshots,
            in_flight,
            delivered: delivered.into_values().flatten().collect(),
            emitted,
            q_target,
            epsilon: eps,
            consensus,
            mass_sum,
            expected,
        });
    }

    violations.sort_by_key(|v: &ViolationRecord| (v.step, v.node));
    Ok(Trace {
        algorithm: kind,
        seed,
        x: input.x.clone(),
        tau_bar: input.knowledge.tau_bars().to_vec(),
        schedule: input.schedule.clone(),
        topology: input.topology.clone(),
        steps,
        violations,
    })
}

fn sorted_messages(mut msgs: Vec<TransmissionMessage>) -> Vec<TransmissionMessage> {
    msgs.sort_by_key(|m| (m.from, m.to, m.deliver_step));
    msgs
}
