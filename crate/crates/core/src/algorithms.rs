//! Per-node state machines for the three algorithm variants.
//!
//! Every step function takes the node as it stands at step `k`, the messages
//! delivered to it at `k`, and returns the node's contribution to step `k + 1`
//! together with the messages it emits. Messages emitted in the same round are
//! merged by the engine afterwards, so node order never matters.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::{
    arrival_init, arrival_init_open, departing_probabilities, departure_handoff_closed,
    departure_handoff_open, merge_received, remaining_probabilities, split_mass, MassPair,
    MessageKind, NodeRecord, StateTriple, TargetSampler, TransmissionMessage,
};
use crate::topology::{NodeId, NodeSets};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Remaining,
    Arriving,
    Departing,
    DepartingSoon,
    LongTermRemaining,
    Inactive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgorithmKind {
    /// Closed-sum averaging over the current active set.
    Qaod,
    /// As `Qaod`, tolerating bounded processing delays.
    Qapod,
    /// Averaging over every node that has ever been active.
    Qaiod,
}

/// Which set a departing node must be able to reach.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepartureTarget {
    Remaining,
    LongTermRemaining,
}

impl AlgorithmKind {
    pub const ALL: [AlgorithmKind; 3] = [AlgorithmKind::Qaod, AlgorithmKind::Qapod, AlgorithmKind::Qaiod];

    pub fn name(self) -> &'static str {
        match self {
            AlgorithmKind::Qaod => "qaod",
            AlgorithmKind::Qapod => "qapod",
            AlgorithmKind::Qaiod => "qaiod",
        }
    }

    pub fn departure_target(self) -> DepartureTarget {
        match self {
            AlgorithmKind::Qapod => DepartureTarget::LongTermRemaining,
            AlgorithmKind::Qaod | AlgorithmKind::Qaiod => DepartureTarget::Remaining,
        }
    }

    /// Whether the network keeps churning forever under this variant.
    pub fn is_indefinitely_open(self) -> bool {
        self == AlgorithmKind::Qaiod
    }
}

impl fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AlgorithmKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AlgorithmKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown algorithm {s:?}; expected qaod, qapod or qaiod")))
    }
}

impl NodeSets {
    /// The set a departing node hands its mass to.
    pub fn departure_targets(&self, target: DepartureTarget) -> &BTreeSet<NodeId> {
        match target {
            DepartureTarget::Remaining => &self.remaining,
            DepartureTarget::LongTermRemaining => &self.long_term_remaining,
        }
    }
}

/// Operating mode of `node` at step `k`.
pub fn classify_mode(kind: AlgorithmKind, node: NodeId, k: usize, sets: &NodeSets) -> Result<Mode> {
    let candidates: Vec<Mode> = match kind {
        AlgorithmKind::Qaod | AlgorithmKind::Qaiod => [
            (Mode::Arriving, &sets.arriving),
            (Mode::Departing, &sets.departing),
            (Mode::Remaining, &sets.remaining),
        ]
        .into_iter()
        .filter(|(_, set)| set.contains(&node))
        .map(|(m, _)| m)
        .collect(),
        AlgorithmKind::Qapod => {
            let modes: Vec<Mode> = [
                (Mode::Departing, &sets.departing),
                (Mode::DepartingSoon, &sets.departing_soon),
                (Mode::LongTermRemaining, &sets.long_term_remaining),
                (Mode::Arriving, &sets.arriving),
            ]
            .into_iter()
            .filter(|(_, set)| set.contains(&node))
            .map(|(m, _)| m)
            .collect();
            if modes.is_empty() && sets.remaining.contains(&node) {
                // active next step but neither soon-departing nor long-term
                return Err(Error::ScheduleCorruption { step: k, node });
            }
            modes
        }
    };
    match candidates.as_slice() {
        [] => Ok(Mode::Inactive),
        [mode] => Ok(*mode),
        _ => Err(Error::ScheduleCorruption { step: k, node }),
    }
}

fn split_messages(from: NodeId, sends: Vec<(NodeId, MassPair)>, k: usize, delay: usize) -> Vec<TransmissionMessage> {
    sends
        .into_iter()
        .map(|(to, m)| TransmissionMessage {
            from,
            to,
            c_y: m.y,
            c_z: m.z,
            emit_step: k,
            deliver_step: k + delay,
            kind: MessageKind::Split,
        })
        .collect()
}

/// Refreshes the state from the current mass and scatters the mass over
/// `targets ∪ {self}`. A node without tokens keeps everything untouched.
fn refresh_and_split<R: Rng + ?Sized>(
    node: &NodeRecord,
    targets: &BTreeSet<NodeId>,
    k: usize,
    delay: usize,
    rng: &mut R,
) -> (NodeRecord, Vec<TransmissionMessage>) {
    let mut next = node.clone();
    let Some(state) = StateTriple::from_mass(node.mass) else {
        return (next, Vec::new());
    };
    next.state = state;
    let probs = remaining_probabilities(targets, node.id);
    let out = split_mass(node.mass, &probs, node.id, rng);
    next.mass = out.kept;
    (next, split_messages(node.id, out.sends, k, delay))
}

fn handoff<R: Rng + ?Sized>(
    from: NodeId,
    payload: MassPair,
    qualifying: &BTreeSet<NodeId>,
    k: usize,
    rng: &mut R,
) -> Result<TransmissionMessage> {
    let probs = departing_probabilities(qualifying)?;
    let to = TargetSampler::new(&probs).sample(rng);
    Ok(TransmissionMessage {
        from,
        to,
        c_y: payload.y,
        c_z: payload.z,
        emit_step: k,
        deliver_step: k,
        kind: MessageKind::Handoff,
    })
}

/// Mass a departing node hands off, after merging what was delivered to it.
pub fn departure_payload(kind: AlgorithmKind, node: &NodeRecord, inbox: &[MassPair]) -> MassPair {
    let mass = merge_received(node.mass, inbox);
    match kind {
        AlgorithmKind::Qaiod => departure_handoff_open(mass),
        AlgorithmKind::Qaod | AlgorithmKind::Qapod => departure_handoff_closed(mass, node.x),
    }
}

/// Remaining node: snapshot state, split, keep one share; the inbox joins the
/// kept mass at `k + 1`.
pub fn step_remaining_qaod<R: Rng + ?Sized>(
    node: &NodeRecord,
    out_remaining: &BTreeSet<NodeId>,
    inbox: &[MassPair],
    k: usize,
    rng: &mut R,
) -> (NodeRecord, Vec<TransmissionMessage>) {
    let (mut next, msgs) = refresh_and_split(node, out_remaining, k, 0, rng);
    next.mass = merge_received(next.mass, inbox);
    (next, msgs)
}

/// Departing node: one handoff to a random remaining out-neighbor carrying
/// everything except the node's own initial tokens.
pub fn step_departing_qaod<R: Rng + ?Sized>(
    node: &NodeRecord,
    out_remaining: &BTreeSet<NodeId>,
    inbox: &[MassPair],
    k: usize,
    rng: &mut R,
) -> Result<TransmissionMessage> {
    let payload = departure_payload(AlgorithmKind::Qaod, node, inbox);
    handoff(node.id, payload, out_remaining, k, rng)
}

/// One round of the delay-tolerant variant for a node in `mode`.
///
/// `out_longterm` are the node's out-neighbors in `R'[k]`; `delay` applies to
/// every split piece sent to another node. Handoffs are never delayed.
pub fn step_qapod<R: Rng + ?Sized>(
    node: &NodeRecord,
    mode: Mode,
    out_longterm: &BTreeSet<NodeId>,
    inbox: &[MassPair],
    k: usize,
    delay: usize,
    rng: &mut R,
) -> Result<(NodeRecord, Vec<TransmissionMessage>)> {
    match mode {
        Mode::LongTermRemaining => {
            let (mut next, msgs) = refresh_and_split(node, out_longterm, k, delay, rng);
            next.mass = merge_received(next.mass, inbox);
            Ok((next, msgs))
        }
        Mode::DepartingSoon => {
            let mut next = node.clone();
            next.mass = merge_received(node.mass, inbox);
            Ok((next, Vec::new()))
        }
        Mode::Departing => {
            let payload = departure_payload(AlgorithmKind::Qapod, node, inbox);
            let msg = handoff(node.id, payload, out_longterm, k, rng)?;
            Ok((node.clone(), vec![msg]))
        }
        Mode::Arriving => {
            let (mass, state) = arrival_init(node.x);
            Ok((NodeRecord { mass, state, ..node.clone() }, Vec::new()))
        }
        _ => Err(Error::InvalidConfig(format!("{mode:?} is not a delay-tolerant mode"))),
    }
}

/// One round of the indefinitely-open variant for a node in `mode`.
pub fn step_qaiod<R: Rng + ?Sized>(
    node: &NodeRecord,
    mode: Mode,
    out_remaining: &BTreeSet<NodeId>,
    inbox: &[MassPair],
    k: usize,
    rng: &mut R,
) -> Result<(NodeRecord, Vec<TransmissionMessage>)> {
    match mode {
        Mode::Remaining => {
            let mut active = node.clone();
            active.eta = false;
            if node.mass.z < 1 {
                active.mass = merge_received(node.mass, inbox);
                return Ok((active, Vec::new()));
            }
            active.nu = k as i64;
            let (mut next, msgs) = refresh_and_split(&active, out_remaining, k, 0, rng);
            next.mass = merge_received(next.mass, inbox);
            Ok((next, msgs))
        }
        Mode::Departing => {
            let payload = departure_payload(AlgorithmKind::Qaiod, node, inbox);
            let msg = handoff(node.id, payload, out_remaining, k, rng)?;
            Ok((node.clone(), vec![msg]))
        }
        Mode::Arriving => {
            let (mass, state) = arrival_init_open(node)?;
            let mut next = NodeRecord { mass, state, ..node.clone() };
            if node.eta {
                next.eta = false;
                next.nu = k as i64 + 1;
            }
            Ok((next, Vec::new()))
        }
        _ => Err(Error::InvalidConfig(format!("{mode:?} is not an open-network mode"))),
    }
}
