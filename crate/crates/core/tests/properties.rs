use std::collections::BTreeSet;

use num_integer::{div_ceil, div_floor};
use num_rational::Ratio;
use omas_core::algorithms::{classify_mode, AlgorithmKind, Mode};
use omas_core::config::{preset, ScenarioConfig, TauBar};
use omas_core::engine::{run, simulate, simulate_in_order, SimulationInput};
use omas_core::protocol::{
    arrival_init, departure_handoff_closed, merge_received, probabilities_sum_to_one,
    remaining_probabilities, split_mass, MassPair,
};
use omas_core::topology::{
    generate_membership_schedule, node_sets_at, DepartureKnowledge, NodeId,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_cfg(kind: AlgorithmKind, tau: u32, rate: f64) -> ScenarioConfig {
    ScenarioConfig {
        n_total: 24,
        n_active_initial: 16,
        churn_rate: rate,
        stabilization_step: Some(25),
        instances: 4,
        tau_bar: TauBar::Global(tau),
        horizon: 60,
        algorithm: kind,
        ..preset("desk").unwrap()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_conserves_and_pieces_stay_near_the_ratio(
        y in -500i64..500,
        z in 0i64..40,
        neighbors in proptest::collection::btree_set(1u32..12, 0..6),
        seed in any::<u64>(),
    ) {
        let me = NodeId(0);
        let out: BTreeSet<NodeId> = neighbors.into_iter().map(NodeId).collect();
        let probs = remaining_probabilities(&out, me);
        prop_assert!(probabilities_sum_to_one(&probs));
        let res = split_mass(MassPair::new(y, z), &probs, me, &mut ChaCha8Rng::seed_from_u64(seed));
        let total = res.kept + res.sends.iter().map(|&(_, m)| m).sum::<MassPair>();
        prop_assert_eq!(total, MassPair::new(y, z));
        prop_assert!(res.sends.iter().all(|(to, m)| *to != me && out.contains(to) && m.z >= 1));
        if z >= 1 {
            let (lo, hi) = (div_floor(y, z), div_ceil(y, z));
            for &(_, m) in &res.sends {
                prop_assert!(m.y >= lo * m.z && m.y <= hi * m.z);
            }
            prop_assert!(res.kept.y >= lo * res.kept.z && res.kept.y <= hi * res.kept.z);
        }
    }

    #[test]
    fn closed_handoff_removes_exactly_the_initial_contribution(
        dy in -100i64..100, dz in 0i64..20, ry in -100i64..100, rz in 0i64..20, x in -50i64..50,
    ) {
        let dep = MassPair::new(dy, dz);
        let recv = MassPair::new(ry, rz);
        let after = merge_received(recv, &[departure_handoff_closed(dep, x)]);
        prop_assert_eq!((dep + recv) - after, MassPair::new(2 * x, 2));
        prop_assert_eq!(departure_handoff_closed(arrival_init(x).0, x), MassPair::ZERO);
    }

    #[test]
    fn schedules_obey_the_set_algebra(seed in any::<u64>(), rate in 0.0f64..0.6, tau in 0u32..8) {
        let cfg = small_cfg(AlgorithmKind::Qapod, tau, rate);
        let sched = generate_membership_schedule(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let know = DepartureKnowledge::exact(&sched, cfg.tau_bars()).unwrap();
        for k in 0..sched.horizon() - 1 {
            let v = sched.active(k);
            let sets = node_sets_at(&sched, &know, k);
            let rebuilt: BTreeSet<NodeId> = v.difference(&sets.departing).chain(&sets.arriving).copied().collect();
            prop_assert_eq!(&rebuilt, sched.active(k + 1));
            prop_assert!(sets.arriving.is_disjoint(v));
            let r: BTreeSet<NodeId> = v.intersection(sched.active(k + 1)).copied().collect();
            prop_assert_eq!(&r, &sets.remaining);
            prop_assert!(sets.long_term_remaining.is_subset(&sets.remaining));
            prop_assert!(sets.departing_soon.is_disjoint(&sets.long_term_remaining));

            for kind in AlgorithmKind::ALL {
                for &node in v {
                    let mode = classify_mode(kind, node, k, &sets).unwrap();
                    prop_assert_ne!(mode, Mode::Inactive);
                    let delay_mode = matches!(mode, Mode::DepartingSoon | Mode::LongTermRemaining);
                    if kind == AlgorithmKind::Qapod {
                        prop_assert_ne!(mode, Mode::Remaining);
                    } else {
                        prop_assert!(!delay_mode);
                    }
                }
            }
        }
    }

    #[test]
    fn visit_order_does_not_change_the_trace(seed in any::<u64>(), kind_idx in 0usize..3) {
        let kind = AlgorithmKind::ALL[kind_idx];
        let cfg = small_cfg(kind, 3, 0.1);
        let input = SimulationInput::generate(&cfg, seed).unwrap();
        let mut order: Vec<NodeId> = (0..cfg.n_total).map(NodeId::from).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xABCD));
        let a = simulate(&input, kind, seed).unwrap();
        let b = simulate_in_order(&input, kind, seed, &order).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn zero_delay_bound_reduces_to_the_closed_variant(seed in any::<u64>()) {
        let closed = run(&small_cfg(AlgorithmKind::Qaod, 0, 0.1), AlgorithmKind::Qaod, seed).unwrap();
        let delayed = run(&small_cfg(AlgorithmKind::Qapod, 0, 0.1), AlgorithmKind::Qapod, seed).unwrap();
        prop_assert_eq!(&closed.topology, &delayed.topology);
        for (a, b) in closed.steps.iter().zip(&delayed.steps) {
            let masses = |s: &omas_core::engine::StepRecord| s.nodes.iter().map(|n| (n.id, n.mass, n.state)).collect::<Vec<_>>();
            prop_assert_eq!(masses(a), masses(b));
            prop_assert_eq!(&a.emitted, &b.emitted);
            prop_assert_eq!(a.epsilon, b.epsilon);
        }
    }

    #[test]
    fn open_variant_never_goes_negative(seed in any::<u64>(), rate in 0.05f64..0.5) {
        let cfg = small_cfg(AlgorithmKind::Qaiod, 0, rate);
        let trace = run(&cfg, AlgorithmKind::Qaiod, seed).unwrap();
        for s in &trace.steps {
            prop_assert!(s.nodes.iter().all(|n| n.mass.z >= 0));
        }
    }

    #[test]
    fn consensus_holds_once_converged(seed in any::<u64>()) {
        let cfg = small_cfg(AlgorithmKind::Qaod, 0, 0.1);
        let trace = run(&cfg, AlgorithmKind::Qaod, seed).unwrap();
        let eps: Vec<i64> = trace.steps.iter().map(|s| s.epsilon).collect();
        if let Some(c) = omas_core::metrics::convergence_index(&eps, 1) {
            // state snapshots lag the masses by one round
            for s in trace.steps.iter().skip(c + 1) {
                prop_assert!(s.consensus, "step {}", s.k);
            }
        }
    }
}

#[test]
fn epsilon_enumeration_matches_the_band_definition() {
    let q = Ratio::new(7, 3);
    for a in -10..=10i64 {
        for b in 1..=4i64 {
            let m = MassPair::new(a, b);
            let direct = (div_ceil(a, b) - 3).max(0) + (2 - div_floor(a, b)).max(0);
            assert_eq!(omas_core::metrics::epsilon([m], q), direct);
        }
    }
}
