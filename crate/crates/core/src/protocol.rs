//! Integer token arithmetic shared by the three algorithms.
//!
//! A node's mass is the aggregate pair `(y, z)`: `z` counts unit tokens and
//! `y` is the sum of their values. Remaining nodes split their mass into `z`
//! pieces of nearly equal value and scatter them over a uniform distribution on
//! their qualifying out-neighbors plus themselves. Arrivals inject `(2x, 2)`;
//! departures hand their mass to a qualifying out-neighbor, either minus their
//! own initial contribution (closed-sum variants) or unchanged (open variant).

use std::collections::{BTreeMap, BTreeSet};
use std::ops::{Add, AddAssign, Sub};

use num_integer::{div_ceil, div_floor, Integer};
use num_rational::Ratio;
use num_traits::{One, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::NodeId;

/// The `r_j` weight every node starts with.
pub const INITIAL_WEIGHT: i64 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MassPair {
    pub y: i64,
    pub z: i64,
}

impl MassPair {
    pub const ZERO: MassPair = MassPair { y: 0, z: 0 };

    pub const fn new(y: i64, z: i64) -> Self {
        MassPair { y, z }
    }

    /// `⌊y/z⌋`, or `None` when the node holds no token.
    pub fn floor_ratio(self) -> Option<i64> {
        (self.z >= 1).then(|| div_floor(self.y, self.z))
    }

    /// `⌈y/z⌉`, or `None` when the node holds no token.
    pub fn ceil_ratio(self) -> Option<i64> {
        (self.z >= 1).then(|| div_ceil(self.y, self.z))
    }
}

impl Add for MassPair {
    type Output = MassPair;
    fn add(self, rhs: MassPair) -> MassPair {
        MassPair::new(self.y + rhs.y, self.z + rhs.z)
    }
}

impl AddAssign for MassPair {
    fn add_assign(&mut self, rhs: MassPair) {
        self.y += rhs.y;
        self.z += rhs.z;
    }
}

impl Sub for MassPair {
    type Output = MassPair;
    fn sub(self, rhs: MassPair) -> MassPair {
        MassPair::new(self.y - rhs.y, self.z - rhs.z)
    }
}

impl std::iter::Sum for MassPair {
    fn sum<I: Iterator<Item = MassPair>>(iter: I) -> MassPair {
        iter.fold(MassPair::ZERO, Add::add)
    }
}

/// Last snapshot of the mass, with `q_s = ⌊y_s / z_s⌋`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateTriple {
    pub y_s: i64,
    pub z_s: i64,
    pub q_s: i64,
}

impl StateTriple {
    /// Snapshot of `mass`; `None` if it holds no token.
    pub fn from_mass(mass: MassPair) -> Option<Self> {
        mass.floor_ratio().map(|q_s| StateTriple {
            y_s: mass.y,
            z_s: mass.z,
            q_s,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: NodeId,
    pub x: i64,
    pub mass: MassPair,
    pub state: StateTriple,
    /// Participation flag: `true` until the node has been active once.
    pub eta: bool,
    /// Last step at which the state triple was written, `-1` if never.
    pub nu: i64,
}

impl NodeRecord {
    /// A node as initialised before step 0: mass `(2x, 2r)`, never active.
    pub fn new(id: NodeId, x: i64) -> Self {
        let (mass, state) = arrival_init(x);
        NodeRecord {
            id,
            x,
            mass,
            state,
            eta: true,
            nu: -1,
        }
    }

    pub fn r(&self) -> i64 {
        INITIAL_WEIGHT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Split,
    Handoff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransmissionMessage {
    pub from: NodeId,
    pub to: NodeId,
    pub c_y: i64,
    pub c_z: i64,
    pub emit_step: usize,
    pub deliver_step: usize,
    pub kind: MessageKind,
}

impl TransmissionMessage {
    pub fn payload(&self) -> MassPair {
        MassPair::new(self.c_y, self.c_z)
    }
}

/// Exact probability assignment over transmission targets.
pub type ProbabilityMap = BTreeMap<NodeId, Ratio<u64>>;

/// Uniform weights over `out_remaining ∪ {self}`.
pub fn remaining_probabilities(out_remaining: &BTreeSet<NodeId>, self_id: NodeId) -> ProbabilityMap {
    debug_assert!(!out_remaining.contains(&self_id));
    let p = Ratio::new(1, 1 + out_remaining.len() as u64);
    out_remaining
        .iter()
        .copied()
        .chain(std::iter::once(self_id))
        .map(|v| (v, p))
        .collect()
}

/// Uniform weights over the qualifying out-neighbors of a departing node.
pub fn departing_probabilities(out_qualifying: &BTreeSet<NodeId>) -> Result<ProbabilityMap> {
    if out_qualifying.is_empty() {
        return Err(Error::DepartureConditionViolated);
    }
    let p = Ratio::new(1, out_qualifying.len() as u64);
    Ok(out_qualifying.iter().map(|&v| (v, p)).collect())
}

/// Sampler over a [`ProbabilityMap`]: one uniform integer draw against the
/// cumulative weights scaled to a common denominator, targets in id order.
#[derive(Debug, Clone)]
pub struct TargetSampler {
    targets: Vec<NodeId>,
    cumulative: Vec<u64>,
}

impl TargetSampler {
    pub fn new(probs: &ProbabilityMap) -> Self {
        let denom = probs
            .values()
            .fold(1u64, |acc, p| acc.lcm(p.denom()));
        let mut targets = Vec::with_capacity(probs.len());
        let mut cumulative = Vec::with_capacity(probs.len());
        let mut running = 0u64;
        for (&v, p) in probs {
            if p.is_zero() {
                continue;
            }
            running += p.numer() * (denom / p.denom());
            targets.push(v);
            cumulative.push(running);
        }
        debug_assert_eq!(running, denom, "probabilities must sum to one");
        TargetSampler {
            targets,
            cumulative,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> NodeId {
        let total = *self.cumulative.last().expect("empty distribution");
        let u = rng.gen_range(0..total);
        let i = self.cumulative.partition_point(|&c| c <= u);
        self.targets[i]
    }
}

pub fn probabilities_sum_to_one(probs: &ProbabilityMap) -> bool {
    probs.values().fold(Ratio::zero(), |acc: Ratio<u64>, p| acc + p).is_one()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitOutcome {
    /// Pieces assigned to the node itself, including the final leftover.
    pub kept: MassPair,
    /// Aggregated pieces per other target, in id order.
    pub sends: Vec<(NodeId, MassPair)>,
}

/// Splits `mass` into `z` unit pieces and scatters them over `targets`.
///
/// While more than one token remains, `⌊y/z⌋` is peeled off with the current
/// `(y, z)` and given to a drawn target; the last piece always stays with the
/// node. With `z <= 1` nothing moves.
pub fn split_mass<R: Rng + ?Sized>(
    mass: MassPair,
    targets: &ProbabilityMap,
    self_id: NodeId,
    rng: &mut R,
) -> SplitOutcome {
    let mut buckets: BTreeMap<NodeId, MassPair> = BTreeMap::new();
    let MassPair { mut y, mut z } = mass;
    if z > 1 {
        let sampler = TargetSampler::new(targets);
        while z > 1 {
            let delta = div_floor(y, z);
            *buckets.entry(sampler.sample(rng)).or_default() += MassPair::new(delta, 1);
            y -= delta;
            z -= 1;
        }
    }
    let kept = buckets.remove(&self_id).unwrap_or_default() + MassPair::new(y, z);
    SplitOutcome {
        kept,
        sends: buckets.into_iter().collect(),
    }
}

/// `kept + Σ inbox`.
pub fn merge_received(kept: MassPair, inbox: &[MassPair]) -> MassPair {
    inbox.iter().fold(kept, |acc, &m| acc + m)
}

/// Mass and state of a node entering the network for the first time.
pub fn arrival_init(x: i64) -> (MassPair, StateTriple) {
    let mass = MassPair::new(2 * x, 2 * INITIAL_WEIGHT);
    let state = StateTriple::from_mass(mass).expect("two tokens");
    (mass, state)
}

/// Handoff that strips the departing node's own `(2x, 2r)` from its mass.
pub fn departure_handoff_closed(mass: MassPair, x: i64) -> MassPair {
    mass - MassPair::new(2 * x, 2 * INITIAL_WEIGHT)
}

/// Handoff that forwards the whole mass; the node's contribution stays.
pub fn departure_handoff_open(mass: MassPair) -> MassPair {
    mass
}

/// Arrival under indefinite openness. A first activation behaves like
/// [`arrival_init`]; a re-activation starts with no mass and the state held at
/// its last update.
pub fn arrival_init_open(record: &NodeRecord) -> Result<(MassPair, StateTriple)> {
    if record.eta {
        Ok(arrival_init(record.x))
    } else if record.nu < 0 {
        Err(Error::ReactivationWithoutHistory { node: record.id })
    } else {
        Ok((MassPair::ZERO, record.state))
    }
}
