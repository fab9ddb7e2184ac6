use std::collections::BTreeSet;

use num_rational::Ratio;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use super::{Digraph, NodeId};
use crate::error::{Error, Result};

/// Active set `V[k]` for every step of a run.
///
/// Step `k` is followed by `k + 1`; past the last recorded step the network is
/// treated as closed, so `V[horizon] = V[horizon - 1]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleRepr")]
pub struct MembershipSchedule {
    n_total: usize,
    active: Vec<BTreeSet<NodeId>>,
    stabilization_step: Option<usize>,
}

#[derive(Deserialize)]
struct ScheduleRepr {
    n_total: usize,
    active: Vec<BTreeSet<NodeId>>,
    stabilization_step: Option<usize>,
}

impl TryFrom<ScheduleRepr> for MembershipSchedule {
    type Error = Error;

    fn try_from(r: ScheduleRepr) -> Result<Self> {
        MembershipSchedule::new(r.n_total, r.active, r.stabilization_step)
    }
}

impl MembershipSchedule {
    pub fn new(
        n_total: usize,
        active: Vec<BTreeSet<NodeId>>,
        stabilization_step: Option<usize>,
    ) -> Result<Self> {
        if active.is_empty() {
            return Err(Error::InvalidSchedule {
                step: 0,
                reason: "horizon must be at least one step".into(),
            });
        }
        for (k, set) in active.iter().enumerate() {
            if let Some(bad) = set.iter().find(|v| v.index() >= n_total) {
                return Err(Error::InvalidSchedule {
                    step: k,
                    reason: format!("{bad} is outside the potential node set of size {n_total}"),
                });
            }
        }
        if let Some(ks) = stabilization_step {
            if let Some(base) = active.get(ks) {
                if let Some(k) = (ks..active.len()).find(|&k| &active[k] != base) {
                    return Err(Error::InvalidSchedule {
                        step: k,
                        reason: format!("active set changes after stabilization step {ks}"),
                    });
                }
            }
        }
        Ok(MembershipSchedule {
            n_total,
            active,
            stabilization_step,
        })
    }

    /// A closed network: the same active set at every step.
    pub fn constant(n_total: usize, active: BTreeSet<NodeId>, horizon: usize) -> Result<Self> {
        Self::new(n_total, vec![active; horizon], Some(0))
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    pub fn horizon(&self) -> usize {
        self.active.len()
    }

    pub fn stabilization_step(&self) -> Option<usize> {
        self.stabilization_step
    }

    pub fn active(&self, k: usize) -> &BTreeSet<NodeId> {
        &self.active[k.min(self.active.len() - 1)]
    }

    pub fn active_sets(&self) -> &[BTreeSet<NodeId>] {
        &self.active
    }

    pub fn is_active(&self, node: NodeId, k: usize) -> bool {
        k < self.active.len() && self.active[k].contains(&node)
    }

    pub fn next_active(&self, k: usize) -> &BTreeSet<NodeId> {
        self.active(k + 1)
    }

    /// `R[k] = V[k] ∩ V[k+1]`.
    pub fn remaining(&self, k: usize) -> BTreeSet<NodeId> {
        self.active(k)
            .intersection(self.next_active(k))
            .copied()
            .collect()
    }

    /// `A[k] = V[k+1] \ V[k]`.
    pub fn arriving(&self, k: usize) -> BTreeSet<NodeId> {
        self.next_active(k)
            .difference(self.active(k))
            .copied()
            .collect()
    }

    /// `D[k] = V[k] \ V[k+1]`.
    pub fn departing(&self, k: usize) -> BTreeSet<NodeId> {
        self.active(k)
            .difference(self.next_active(k))
            .copied()
            .collect()
    }

    /// Nodes active at least once in `0..=k`.
    pub fn historical(&self, k: usize) -> BTreeSet<NodeId> {
        self.active[..=k.min(self.active.len() - 1)]
            .iter()
            .flatten()
            .copied()
            .collect()
    }

    /// Steps `d` with `node ∈ D[d]`, ascending.
    pub fn departure_steps(&self, node: NodeId) -> Vec<usize> {
        (0..self.horizon())
            .filter(|&k| self.active(k).contains(&node) && !self.next_active(k).contains(&node))
            .collect()
    }
}

/// What each node knows about its own future departures, plus the per-node
/// processing-delay bounds.
///
/// The simulator hands out exact knowledge: the announced window collapses to
/// the true departure, `ρ^l = s - k` and `ρ^u = ρ^l + 1` where `s` is the first
/// step at which the node is inactive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepartureKnowledge {
    tau_bar: Vec<u32>,
    departures: Vec<Vec<usize>>,
}

impl DepartureKnowledge {
    pub fn exact(schedule: &MembershipSchedule, tau_bar: Vec<u32>) -> Result<Self> {
        if tau_bar.len() != schedule.n_total() {
            return Err(Error::InvalidConfig(format!(
                "{} delay bounds for {} nodes",
                tau_bar.len(),
                schedule.n_total()
            )));
        }
        let mut departures = vec![Vec::new(); schedule.n_total()];
        for k in 0..schedule.horizon() {
            for v in schedule.departing(k) {
                departures[v.index()].push(k);
            }
        }
        Ok(DepartureKnowledge {
            tau_bar,
            departures,
        })
    }

    pub fn tau_bar(&self, node: NodeId) -> u32 {
        self.tau_bar[node.index()]
    }

    pub fn tau_bars(&self) -> &[u32] {
        &self.tau_bar
    }

    /// Smallest `d >= k` with `node ∈ D[d]`.
    pub fn next_departure(&self, node: NodeId, k: usize) -> Option<usize> {
        let steps = &self.departures[node.index()];
        let i = steps.partition_point(|&d| d < k);
        steps.get(i).copied()
    }

    /// Announced departure window `(ρ^l, ρ^u)` at step `k`, if a departure is
    /// scheduled. Always satisfies `ρ^u > ρ^l >= 1`.
    pub fn window(&self, node: NodeId, k: usize) -> Option<(usize, usize)> {
        self.next_departure(node, k).map(|d| {
            let lower = d + 1 - k;
            (lower, lower + 1)
        })
    }
}

/// The operating sets of step `k`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSets {
    pub remaining: BTreeSet<NodeId>,
    pub arriving: BTreeSet<NodeId>,
    pub departing: BTreeSet<NodeId>,
    pub departing_soon: BTreeSet<NodeId>,
    pub long_term_remaining: BTreeSet<NodeId>,
}

/// Computes `R[k]`, `A[k]`, `D[k]`, `S[k]` and `R'[k]`.
///
/// `S[k]` holds active nodes, other than those in `D[k]`, whose announced
/// window starts within their own maximum processing delay. `R'[k]` holds
/// nodes of `R[k]` whose window (if any) starts strictly after it, so
/// `R[k] = S[k] ⊎ R'[k]`.
pub fn node_sets_at(
    schedule: &MembershipSchedule,
    knowledge: &DepartureKnowledge,
    k: usize,
) -> NodeSets {
    let remaining = schedule.remaining(k);
    let departing = schedule.departing(k);
    let arriving = schedule.arriving(k);

    let mut departing_soon = BTreeSet::new();
    let mut long_term_remaining = BTreeSet::new();
    for &v in &remaining {
        let tau_bar = knowledge.tau_bar(v) as usize;
        match knowledge.window(v, k) {
            Some((lower, upper)) if lower <= tau_bar => {
                // departure inside {k + ρ^l, ..., k + ρ^u}
                let d = knowledge.next_departure(v, k).expect("window implies departure");
                if (k + lower..=k + upper).contains(&(d + 1)) {
                    departing_soon.insert(v);
                }
            }
            Some((lower, _)) => {
                // no departure inside {k+2, ..., k+ρ^l-1}
                let d = knowledge.next_departure(v, k).expect("window implies departure");
                if !(k + 2..k + lower).contains(&(d + 1)) {
                    long_term_remaining.insert(v);
                }
            }
            None => {
                long_term_remaining.insert(v);
            }
        }
    }

    NodeSets {
        remaining,
        arriving,
        departing,
        departing_soon,
        long_term_remaining,
    }
}

/// Per-step digraphs plus, for the stable phase, the finite instance set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologySequence {
    pub per_step: Vec<Digraph>,
    #[serde(default)]
    pub instances: Option<Vec<Digraph>>,
    #[serde(default)]
    pub instance_probs: Option<Vec<Ratio<u64>>>,
    /// Index of the instance drawn at each step, `None` before stabilization.
    #[serde(default)]
    pub instance_choice: Vec<Option<usize>>,
}

impl TopologySequence {
    pub fn from_steps(per_step: Vec<Digraph>) -> Self {
        let n = per_step.len();
        TopologySequence {
            per_step,
            instances: None,
            instance_probs: None,
            instance_choice: vec![None; n],
        }
    }

    pub fn horizon(&self) -> usize {
        self.per_step.len()
    }

    pub fn at(&self, k: usize) -> &Digraph {
        &self.per_step[k]
    }

    /// Checks node sets against the schedule and the instance probabilities.
    pub fn validate(&self, schedule: &MembershipSchedule) -> Result<()> {
        if self.per_step.len() != schedule.horizon() {
            return Err(Error::InvalidSchedule {
                step: self.per_step.len().min(schedule.horizon()),
                reason: format!(
                    "topology has {} steps, schedule has {}",
                    self.per_step.len(),
                    schedule.horizon()
                ),
            });
        }
        for (k, g) in self.per_step.iter().enumerate() {
            if g.nodes() != schedule.active(k) {
                return Err(Error::NodeSetMismatch { step: k });
            }
        }
        if let Some(probs) = &self.instance_probs {
            let total = probs.iter().fold(Ratio::zero(), |acc, p| acc + p);
            if probs.iter().any(|p| p.is_zero()) || !total.is_one() {
                return Err(Error::InvalidConfig(
                    "instance probabilities must be positive and sum to one".into(),
                ));
            }
            if self.instances.as_ref().map(Vec::len) != Some(probs.len()) {
                return Err(Error::InvalidConfig(
                    "instance probabilities do not match the instance list".into(),
                ));
            }
        }
        Ok(())
    }
}
