use std::collections::BTreeSet;

use num_rational::Ratio;
use rand::seq::{index, SliceRandom};
use rand::Rng;

use super::{node_sets_at, DepartureKnowledge, Digraph, MembershipSchedule, NodeId, TopologySequence};
use crate::config::{InstanceSelection, ScenarioConfig};
use crate::error::{Error, Result};

/// Resampling budget per departing node before generation gives up.
pub const MAX_ATTEMPTS: usize = 10_000;

fn sample_from<R: Rng + ?Sized>(pool: &[NodeId], amount: usize, rng: &mut R) -> Vec<NodeId> {
    let amount = amount.min(pool.len());
    let mut picked: Vec<NodeId> = index::sample(rng, pool.len(), amount)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    picked.sort();
    picked
}

/// Per-step active sets under uniform churn.
///
/// While the network is open, `round(rate · n[k])` active nodes leave and
/// about as many inactive nodes join: one more with probability
/// `perturb_up_prob`, one fewer otherwise, clamped to the inactive pool. If the
/// pool is smaller than the base count, every inactive node joins.
pub fn generate_membership_schedule<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> Result<MembershipSchedule> {
    if cfg.n_active_initial > cfg.n_total {
        return Err(Error::InvalidConfig(format!(
            "{} initially active nodes out of {}",
            cfg.n_active_initial, cfg.n_total
        )));
    }
    let everyone: Vec<NodeId> = (0..cfg.n_total).map(NodeId::from).collect();
    let stable_from = cfg.effective_stabilization();

    let mut current: BTreeSet<NodeId> = sample_from(&everyone, cfg.n_active_initial, rng)
        .into_iter()
        .collect();
    let mut active = Vec::with_capacity(cfg.horizon);
    for k in 0..cfg.horizon {
        active.push(current.clone());
        if k + 1 == cfg.horizon || cfg.churn_rate == 0.0 || stable_from.is_some_and(|ks| k >= ks) {
            continue;
        }
        let members: Vec<NodeId> = current.iter().copied().collect();
        let pool: Vec<NodeId> = everyone.iter().filter(|v| !current.contains(v)).copied().collect();
        let base = (cfg.churn_rate * members.len() as f64).round() as usize;

        let leaving = sample_from(&members, base, rng);
        let joining_count = if pool.len() < base {
            pool.len()
        } else if rng.gen_bool(cfg.perturb_up_prob) {
            (base + 1).min(pool.len())
        } else {
            base.saturating_sub(1)
        };
        let joining = sample_from(&pool, joining_count, rng);

        for v in leaving {
            current.remove(&v);
        }
        current.extend(joining);
    }
    MembershipSchedule::new(cfg.n_total, active, stable_from)
}

/// Digraph where every node points at `degree` distinct random others.
pub fn random_out_degree_digraph<R: Rng + ?Sized>(
    nodes: &BTreeSet<NodeId>,
    degree: usize,
    rng: &mut R,
) -> Digraph {
    let mut g = Digraph::new(nodes.iter().copied());
    for &v in nodes {
        for w in random_out_set(nodes, v, degree, rng) {
            g.add_edge(v, w).expect("endpoints are members");
        }
    }
    g
}

fn random_out_set<R: Rng + ?Sized>(
    nodes: &BTreeSet<NodeId>,
    v: NodeId,
    degree: usize,
    rng: &mut R,
) -> Vec<NodeId> {
    let others: Vec<NodeId> = nodes.iter().copied().filter(|&w| w != v).collect();
    sample_from(&others, degree, rng)
}

/// `count` random instances over `nodes` whose union contains a random
/// Hamiltonian cycle, so the union is strongly connected.
pub fn generate_instances<R: Rng + ?Sized>(
    nodes: &BTreeSet<NodeId>,
    count: usize,
    degree: usize,
    rng: &mut R,
) -> Vec<Digraph> {
    let mut instances: Vec<Digraph> = (0..count)
        .map(|_| random_out_degree_digraph(nodes, degree, rng))
        .collect();
    let mut order: Vec<NodeId> = nodes.iter().copied().collect();
    order.shuffle(rng);
    if order.len() > 1 {
        for i in 0..order.len() {
            let (a, b) = (order[i], order[(i + 1) % order.len()]);
            instances[i % count].add_edge(a, b).expect("endpoints are members");
        }
    }
    instances
}

/// Topology for every step of `schedule`.
///
/// Before stabilization each step is a fresh random digraph in which every
/// departing node reaches at least one qualifying node (`R[k]`, or `R'[k]`
/// for the delay-tolerant variant). From the stabilization step on, each step
/// is one of `cfg.instances` pre-generated graphs over the final node set.
/// With `violate_departure_condition` set, one step with departures has every
/// qualifying edge of its departing nodes removed.
pub fn generate_topology_sequence<R: Rng + ?Sized>(
    schedule: &MembershipSchedule,
    cfg: &ScenarioConfig,
    knowledge: &DepartureKnowledge,
    rng: &mut R,
) -> Result<TopologySequence> {
    let target = cfg.algorithm.departure_target();
    let horizon = schedule.horizon();
    let stable_from = schedule.stabilization_step().filter(|&ks| ks < horizon);

    let (instances, probs) = match stable_from {
        Some(ks) => {
            let list = generate_instances(schedule.active(ks), cfg.instances, cfg.instance_out_degree, rng);
            let p = vec![Ratio::new(1, cfg.instances as u64); cfg.instances];
            (Some(list), Some(p))
        }
        None => (None, None),
    };

    let mut per_step = Vec::with_capacity(horizon);
    let mut choice = Vec::with_capacity(horizon);
    for k in 0..horizon {
        if let (Some(ks), Some(list)) = (stable_from, &instances) {
            if k >= ks {
                let theta = match cfg.instance_selection {
                    InstanceSelection::Iid => rng.gen_range(0..list.len()),
                    InstanceSelection::RoundRobin => (k - ks) % list.len(),
                };
                per_step.push(list[theta].clone());
                choice.push(Some(theta));
                continue;
            }
        }
        let active = schedule.active(k);
        let mut g = random_out_degree_digraph(active, cfg.out_degree, rng);
        let sets = node_sets_at(schedule, knowledge, k);
        let qualifying = sets.departure_targets(target);
        for &v in &sets.departing {
            ensure_qualifying_neighbor(&mut g, v, qualifying, cfg.out_degree, k, rng)?;
        }
        per_step.push(g);
        choice.push(None);
    }

    if cfg.violate_departure_condition {
        let candidates: Vec<usize> = (0..stable_from.unwrap_or(horizon))
            .filter(|&k| !schedule.departing(k).is_empty())
            .collect();
        let &k = candidates.choose(rng).ok_or_else(|| {
            Error::InvalidConfig("cannot violate the departure condition without departures".into())
        })?;
        let sets = node_sets_at(schedule, knowledge, k);
        let qualifying = sets.departure_targets(target);
        for &v in &sets.departing {
            for w in per_step[k].out_neighbors_in(v, qualifying) {
                per_step[k].remove_edge(v, w);
            }
        }
    }

    let seq = TopologySequence {
        per_step,
        instances,
        instance_probs: probs,
        instance_choice: choice,
    };
    seq.validate(schedule)?;
    Ok(seq)
}

fn ensure_qualifying_neighbor<R: Rng + ?Sized>(
    g: &mut Digraph,
    v: NodeId,
    qualifying: &BTreeSet<NodeId>,
    degree: usize,
    k: usize,
    rng: &mut R,
) -> Result<()> {
    if !g.out_neighbors_in(v, qualifying).is_empty() {
        return Ok(());
    }
    if qualifying.iter().all(|&w| w == v) {
        return Err(Error::ImpossibleTopology { step: k, node: v });
    }
    let nodes = g.nodes().clone();
    for _ in 0..MAX_ATTEMPTS {
        let out = random_out_set(&nodes, v, degree, rng);
        if out.iter().any(|w| qualifying.contains(w)) {
            let old: Vec<NodeId> = g.out_neighbors(v).collect();
            for w in old {
                g.remove_edge(v, w);
            }
            for w in out {
                g.add_edge(v, w)?;
            }
            return Ok(());
        }
    }
    Err(Error::GenerationExhausted {
        step: k,
        attempts: MAX_ATTEMPTS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::AlgorithmKind;
    use crate::config::preset;
    use crate::topology::{verify_t_joint_connectivity, NodeSets};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn desk(kind: AlgorithmKind) -> ScenarioConfig {
        preset("desk").unwrap().with_algorithm(kind)
    }

    fn build(cfg: &ScenarioConfig, seed: u64) -> (MembershipSchedule, DepartureKnowledge, TopologySequence) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sched = generate_membership_schedule(cfg, &mut rng).unwrap();
        let know = DepartureKnowledge::exact(&sched, cfg.tau_bars()).unwrap();
        let seq = generate_topology_sequence(&sched, cfg, &know, &mut rng).unwrap();
        (sched, know, seq)
    }

    fn qualifying_out(seq: &TopologySequence, sets: &NodeSets, v: NodeId, kind: AlgorithmKind, k: usize) -> usize {
        seq.at(k)
            .out_neighbors_in(v, sets.departure_targets(kind.departure_target()))
            .len()
    }

    #[test]
    fn ten_percent_churn_counts() {
        let cfg = ScenarioConfig {
            n_total: 150,
            n_active_initial: 100,
            horizon: 2,
            ..preset("scenario1").unwrap()
        };
        let mut ups = 0;
        for seed in 0..200 {
            let sched = generate_membership_schedule(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert_eq!(sched.departing(0).len(), 10);
            let arrivals = sched.arriving(0).len();
            assert!(arrivals == 9 || arrivals == 11, "{arrivals}");
            ups += usize::from(arrivals == 11);
        }
        assert!((80..=140).contains(&ups), "{ups} upward perturbations out of 200");
    }

    #[test]
    fn small_pool_joins_entirely() {
        let cfg = ScenarioConfig {
            n_total: 12,
            n_active_initial: 10,
            churn_rate: 0.5,
            horizon: 2,
            ..preset("desk").unwrap()
        };
        let sched = generate_membership_schedule(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(sched.departing(0).len(), 5);
        assert_eq!(sched.arriving(0).len(), 2);
    }

    #[test]
    fn zero_rate_is_closed() {
        let cfg = ScenarioConfig { churn_rate: 0.0, ..desk(AlgorithmKind::Qaod) };
        let sched = generate_membership_schedule(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(sched.active_sets().iter().all(|s| s == sched.active(0)));
    }

    #[test]
    fn no_churn_after_stabilization() {
        let cfg = desk(AlgorithmKind::Qaod);
        let sched = generate_membership_schedule(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        for k in 60..cfg.horizon {
            assert_eq!(sched.active(k), sched.active(60));
        }
        assert_ne!(sched.active(0), sched.active(60));
    }

    #[test]
    fn too_many_initial_nodes() {
        let cfg = ScenarioConfig { n_active_initial: 51, ..desk(AlgorithmKind::Qaod) };
        assert!(generate_membership_schedule(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn schedules_are_deterministic() {
        let cfg = desk(AlgorithmKind::Qaod);
        let a = generate_membership_schedule(&cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = generate_membership_schedule(&cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn departing_nodes_reach_qualifying_nodes() {
        for kind in AlgorithmKind::ALL {
            let cfg = desk(kind);
            for seed in 0..5 {
                let (sched, know, seq) = build(&cfg, seed);
                for k in 0..sched.horizon() {
                    let sets = node_sets_at(&sched, &know, k);
                    for &v in &sets.departing {
                        assert!(qualifying_out(&seq, &sets, v, kind, k) >= 1, "{kind} seed {seed} step {k}");
                    }
                }
            }
        }
    }

    #[test]
    fn violation_strips_one_step() {
        let cfg = ScenarioConfig { violate_departure_condition: true, ..desk(AlgorithmKind::Qaod) };
        let (sched, know, seq) = build(&cfg, 4);
        let bad: Vec<usize> = (0..sched.horizon())
            .filter(|&k| {
                let sets = node_sets_at(&sched, &know, k);
                sets.departing
                    .iter()
                    .any(|&v| qualifying_out(&seq, &sets, v, AlgorithmKind::Qaod, k) == 0)
            })
            .collect();
        assert_eq!(bad.len(), 1);
    }

    #[test]
    fn round_robin_stable_phase_is_jointly_connected() {
        let cfg = ScenarioConfig {
            instance_selection: InstanceSelection::RoundRobin,
            ..desk(AlgorithmKind::Qaod)
        };
        let (_, _, seq) = build(&cfg, 2);
        assert!(verify_t_joint_connectivity(&seq, 60, cfg.instances).unwrap());
        let union = crate::topology::union_digraph(seq.instances.as_ref().unwrap()).unwrap();
        assert!(union.is_strongly_connected());
    }

    #[test]
    fn single_strongly_connected_instance_is_constant() {
        let cfg = ScenarioConfig { instances: 1, ..desk(AlgorithmKind::Qaod) };
        let (_, _, seq) = build(&cfg, 6);
        assert!(seq.at(60).is_strongly_connected());
        assert!(seq.per_step[60..].iter().all(|g| g == seq.at(60)));
    }

    #[test]
    fn impossible_when_everyone_leaves() {
        let active = vec![BTreeSet::from([NodeId(0), NodeId(1)]), BTreeSet::new(), BTreeSet::new()];
        let sched = MembershipSchedule::new(2, active, None).unwrap();
        let know = DepartureKnowledge::exact(&sched, vec![0; 2]).unwrap();
        let cfg = ScenarioConfig { n_total: 2, n_active_initial: 2, ..desk(AlgorithmKind::Qaod) };
        assert!(matches!(
            generate_topology_sequence(&sched, &cfg, &know, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::ImpossibleTopology { step: 0, .. })
        ));
    }
}
