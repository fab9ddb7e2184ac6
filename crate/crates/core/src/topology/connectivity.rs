use std::collections::BTreeSet;

use super::{
    node_sets_at, union_digraph, DepartureKnowledge, Digraph, MembershipSchedule, NodeId,
    TopologySequence,
};
use crate::error::{Error, Result};

/// Checks that every window of `t` consecutive steps starting at
/// `from_step + β` has a strongly connected union, for all windows that fit
/// inside the horizon.
///
/// All graphs inside one window must share their node set.
pub fn verify_t_joint_connectivity(seq: &TopologySequence, from_step: usize, t: usize) -> Result<bool> {
    if t == 0 {
        return Err(Error::InvalidConfig("window length must be positive".into()));
    }
    let horizon = seq.horizon();
    if from_step + t > horizon {
        return Err(Error::WindowOutOfRange {
            start: from_step,
            end: from_step + t - 1,
            horizon,
        });
    }
    for start in from_step..=horizon - t {
        let window = &seq.per_step[start..start + t];
        if let Some(off) = window.iter().position(|g| g.nodes() != window[0].nodes()) {
            return Err(Error::NodeSetMismatch { step: start + off });
        }
        if !union_digraph(window)?.is_strongly_connected() {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Nodes active at least once in `k..=k + len`.
pub fn ever_active(schedule: &MembershipSchedule, k: usize, len: usize) -> BTreeSet<NodeId> {
    (k..=k + len)
        .flat_map(|t| schedule.active(t).iter().copied())
        .collect()
}

/// Checks the open joint-connectivity condition at step `k`.
///
/// With `I` the nodes active somewhere in `k..=k+l_prime` and `Q` the edges of
/// `all_possible_edges` among them, the check passes iff `(I, Q)` is strongly
/// connected, the nodes active in `k..=k+t_prime` are exactly `I`, and the
/// edges used in `k..=k+t_prime` are exactly `Q`.
pub fn verify_open_tprime_connectivity(
    schedule: &MembershipSchedule,
    seq: &TopologySequence,
    k: usize,
    l_prime: usize,
    t_prime: usize,
    all_possible_edges: &Digraph,
) -> Result<bool> {
    if t_prime < l_prime {
        return Err(Error::InvalidConfig(format!(
            "T' = {t_prime} must be at least L' = {l_prime}"
        )));
    }
    let horizon = seq.horizon().min(schedule.horizon());
    if k + t_prime >= horizon {
        return Err(Error::WindowOutOfRange {
            start: k,
            end: k + t_prime,
            horizon,
        });
    }

    let short = ever_active(schedule, k, l_prime);
    let virtual_edges: BTreeSet<(NodeId, NodeId)> = all_possible_edges
        .edges()
        .iter()
        .filter(|(a, b)| short.contains(a) && short.contains(b))
        .copied()
        .collect();
    let virtual_union = Digraph::from_edges(short.iter().copied(), virtual_edges.iter().copied())?;
    if !virtual_union.is_strongly_connected() {
        return Ok(false);
    }

    if ever_active(schedule, k, t_prime) != short {
        return Ok(false);
    }
    let used: BTreeSet<(NodeId, NodeId)> = (k..=k + t_prime)
        .flat_map(|t| seq.at(t).edges().iter().copied())
        .collect();
    Ok(used == virtual_edges)
}

/// Departing nodes with no out-neighbor in their qualifying set, as
/// `(step, node)` pairs. Qualifying sets are `R'[k]` when `long_term` is set
/// and `R[k]` otherwise.
pub fn departure_condition_failures(
    schedule: &MembershipSchedule,
    knowledge: &DepartureKnowledge,
    seq: &TopologySequence,
    long_term: bool,
) -> Vec<(usize, NodeId)> {
    let mut out = Vec::new();
    for k in 0..seq.horizon().min(schedule.horizon()) {
        let sets = node_sets_at(schedule, knowledge, k);
        let qualifying = if long_term {
            &sets.long_term_remaining
        } else {
            &sets.remaining
        };
        for &v in &sets.departing {
            if seq.at(k).out_neighbors_in(v, qualifying).is_empty() {
                out.push((k, v));
            }
        }
    }
    out
}
