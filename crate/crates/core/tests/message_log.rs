//! Replays the recorded message log of whole runs and rebuilds every node's
//! mass from scratch, independently of the engine's own bookkeeping.

use std::collections::{BTreeMap, BTreeSet};

use omas_core::algorithms::AlgorithmKind;
use omas_core::config::{preset, ScenarioConfig};
use omas_core::engine::{run, Trace};
use omas_core::protocol::{MassPair, MessageKind};
use omas_core::topology::NodeId;

fn replay(trace: &Trace) {
    let open = trace.algorithm == AlgorithmKind::Qaiod;
    let mut seen: BTreeSet<NodeId> = trace.steps[0].nodes.iter().map(|n| n.id).collect();
    let mut queued: BTreeMap<usize, Vec<(NodeId, MassPair)>> = BTreeMap::new();
    let lost: BTreeSet<(usize, NodeId)> = trace.violations.iter().map(|v| (v.step, v.node)).collect();

    for pair in trace.steps.windows(2) {
        let (now, next) = (&pair[0], &pair[1]);
        let k = now.k;
        let before: BTreeMap<NodeId, MassPair> = now.nodes.iter().map(|n| (n.id, n.mass)).collect();
        let after: BTreeMap<NodeId, MassPair> = next.nodes.iter().map(|n| (n.id, n.mass)).collect();

        let due = queued.remove(&k).unwrap_or_default();
        let mut delivered_log: Vec<(NodeId, MassPair)> =
            now.delivered.iter().map(|m| (m.to, m.payload())).collect();
        let mut due_sorted = due.clone();
        due_sorted.sort_by_key(|&(v, m)| (v, m.y, m.z));
        delivered_log.sort_by_key(|&(v, m)| (v, m.y, m.z));
        assert_eq!(due_sorted, delivered_log, "step {k}: delivered set differs from the log");

        let mut expected: BTreeMap<NodeId, MassPair> = BTreeMap::new();
        for (&v, &m) in &before {
            if after.contains_key(&v) {
                expected.insert(v, m);
            }
        }
        for (to, m) in due {
            if let Some(e) = expected.get_mut(&to) {
                *e += m;
            } else {
                assert!(before.contains_key(&to), "step {k}: delivery to inactive {to}");
            }
        }
        for msg in &now.emitted {
            assert_eq!(msg.emit_step, k);
            assert!(before.contains_key(&msg.from));
            if let Some(e) = expected.get_mut(&msg.from) {
                *e = *e - msg.payload();
            } else {
                assert_eq!(msg.kind, MessageKind::Handoff);
            }
            if msg.deliver_step == k {
                *expected
                    .get_mut(&msg.to)
                    .unwrap_or_else(|| panic!("step {k}: undelayed message to {} which leaves", msg.to)) +=
                    msg.payload();
            } else {
                assert!(msg.deliver_step > k);
                queued.entry(msg.deliver_step).or_default().push((msg.to, msg.payload()));
            }
        }
        for &v in after.keys() {
            if before.contains_key(&v) {
                continue;
            }
            let x = trace.x[v.index()];
            let start = if open && seen.contains(&v) {
                MassPair::ZERO
            } else {
                MassPair::new(2 * x, 2)
            };
            expected.insert(v, start);
        }
        seen.extend(after.keys().copied());

        // departing nodes either handed off or are recorded as lost
        for &v in before.keys().filter(|v| !after.contains_key(v)) {
            let handed = now.emitted.iter().filter(|m| m.from == v && m.kind == MessageKind::Handoff).count();
            assert_eq!(handed + usize::from(lost.contains(&(k, v))), 1, "step {k}: {v}");
        }
        assert_eq!(expected, after, "{} seed {} step {}", trace.algorithm, trace.seed, k + 1);
    }
}

fn sums_match_population(trace: &Trace) {
    let mut historical: BTreeSet<NodeId> = BTreeSet::new();
    for s in &trace.steps {
        let active: BTreeSet<NodeId> = s.nodes.iter().map(|n| n.id).collect();
        historical.extend(&active);
        let population = if trace.algorithm == AlgorithmKind::Qaiod { &historical } else { &active };
        let want = MassPair::new(
            population.iter().map(|v| 2 * trace.x[v.index()]).sum(),
            2 * population.len() as i64,
        );
        let have: MassPair = s.nodes.iter().map(|n| n.mass).sum::<MassPair>()
            + s.in_flight.iter().map(|m| m.payload()).sum::<MassPair>();
        assert_eq!(have, want, "{} seed {} step {}", trace.algorithm, trace.seed, s.k);
    }
}

fn cfg() -> ScenarioConfig {
    ScenarioConfig { horizon: 120, ..preset("desk").unwrap() }
}

#[test]
fn replayed_masses_match_every_algorithm() {
    for kind in AlgorithmKind::ALL {
        for seed in 0..4 {
            let trace = run(&cfg(), kind, seed).unwrap();
            assert!(trace.violations.is_empty());
            replay(&trace);
            sums_match_population(&trace);
        }
    }
}

#[test]
fn replay_accounts_for_lost_departures() {
    let violating = ScenarioConfig { violate_departure_condition: true, ..cfg() };
    for kind in AlgorithmKind::ALL {
        let trace = run(&violating, kind, 2).unwrap();
        assert!(!trace.violations.is_empty());
        replay(&trace);
    }
}

#[test]
fn delayed_messages_never_reach_inactive_nodes() {
    let cfg = ScenarioConfig { tau_bar: omas_core::config::TauBar::Global(8), ..cfg() };
    for seed in 0..6 {
        let trace = run(&cfg, AlgorithmKind::Qapod, seed).unwrap();
        assert!(trace.steps.iter().any(|s| !s.in_flight.is_empty()));
        for s in &trace.steps {
            let active: BTreeSet<NodeId> = s.nodes.iter().map(|n| n.id).collect();
            assert!(s.delivered.iter().all(|m| active.contains(&m.to)));
        }
        replay(&trace);
    }
}
