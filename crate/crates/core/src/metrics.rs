//! Target averages, the error metric, conservation audits and multi-run
//! aggregation.

use std::collections::BTreeSet;

use num_bigint::BigInt;
use num_integer::{div_ceil, div_floor};
use num_rational::{BigRational, Ratio};
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::algorithms::AlgorithmKind;
use crate::engine::{StepRecord, Trace};
use crate::error::{Error, Result};
use crate::protocol::MassPair;
use crate::topology::NodeId;

/// Nodes active at least once so far. Only ever grows.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoricalSet {
    members: BTreeSet<NodeId>,
}

impl HistoricalSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn extend<'a>(&mut self, active: impl IntoIterator<Item = &'a NodeId>) {
        self.members.extend(active.into_iter().copied());
    }

    pub fn members(&self) -> &BTreeSet<NodeId> {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

fn mean_of<'a>(x: &[i64], nodes: impl IntoIterator<Item = &'a NodeId>) -> Result<Ratio<i64>> {
    let (sum, count) = nodes
        .into_iter()
        .fold((0i64, 0i64), |(s, c), v| (s + x[v.index()], c + 1));
    if count == 0 {
        return Err(Error::EmptyNodeSet);
    }
    Ok(Ratio::new(sum, count))
}

/// `Σ_{v ∈ active} x_v / |active|`, exactly.
pub fn active_average(x: &[i64], active: &BTreeSet<NodeId>) -> Result<Ratio<i64>> {
    mean_of(x, active)
}

/// Average of the initial values over every node ever active.
pub fn historical_average(x: &[i64], historical: &HistoricalSet) -> Result<Ratio<i64>> {
    mean_of(x, historical.members())
}

/// Total distance of the node ratios from the band `[⌊q⌋, ⌈q⌉]`.
///
/// Nodes without tokens have no ratio and are skipped.
pub fn epsilon(masses: impl IntoIterator<Item = MassPair>, q: Ratio<i64>) -> i64 {
    let (lo, hi) = (q.floor().to_integer(), q.ceil().to_integer());
    masses
        .into_iter()
        .filter(|m| m.z >= 1)
        .map(|m| {
            let over = (div_ceil(m.y, m.z) - hi).max(0);
            let under = (lo - div_floor(m.y, m.z)).max(0);
            over + under
        })
        .sum()
}

/// True iff every quantized state lies in `{⌊q⌋, ⌈q⌉}`.
pub fn check_consensus(q_states: impl IntoIterator<Item = i64>, q: Ratio<i64>) -> bool {
    let (lo, hi) = (q.floor().to_integer(), q.ceil().to_integer());
    q_states.into_iter().all(|s| s == lo || s == hi)
}

/// Active masses plus in-flight payloads of `record` equal `expected`.
pub fn audit_mass_conservation(record: &StepRecord, expected: MassPair) -> bool {
    let held: MassPair = record.nodes.iter().map(|n| n.mass).sum();
    let flying: MassPair = record.in_flight.iter().map(|m| m.payload()).sum();
    held + flying == expected
}

/// Expected global mass at step `k`: twice the initial values (and counts)
/// of the active set, or of the historical set for the open variant.
pub fn expected_mass<'a>(x: &[i64], population: impl IntoIterator<Item = &'a NodeId>) -> MassPair {
    population
        .into_iter()
        .map(|v| MassPair::new(2 * x[v.index()], 2))
        .sum()
}

/// Smallest `k` such that `series[k..]` is all zero and at least `window`
/// long.
pub fn convergence_index(series: &[i64], window: usize) -> Option<usize> {
    let window = window.max(1);
    let tail_start = series
        .iter()
        .rposition(|&e| e != 0)
        .map_or(0, |last| last + 1);
    (series.len() - tail_start >= window).then_some(tail_start)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub algorithm: AlgorithmKind,
    pub seed: u64,
    pub epsilon_series: Vec<i64>,
    pub target_series: Vec<Ratio<i64>>,
    pub n_active: Vec<usize>,
    pub consensus_series: Vec<bool>,
    pub convergence_step: Option<usize>,
    pub violation_steps: Vec<usize>,
    pub audit_failure_steps: Vec<usize>,
}

impl RunMetrics {
    pub fn from_trace(trace: &Trace) -> Self {
        let mut m = RunMetrics {
            algorithm: trace.algorithm,
            seed: trace.seed,
            epsilon_series: trace.steps.iter().map(|s| s.epsilon).collect(),
            target_series: trace.steps.iter().map(|s| s.q_target).collect(),
            n_active: trace.steps.iter().map(|s| s.nodes.len()).collect(),
            consensus_series: trace.steps.iter().map(|s| s.consensus).collect(),
            convergence_step: None,
            violation_steps: trace.violations.iter().map(|v| v.step).collect(),
            audit_failure_steps: trace
                .steps
                .iter()
                .filter(|s| !audit_mass_conservation(s, s.expected))
                .map(|s| s.k)
                .collect(),
        };
        m.convergence_step = m.convergence_step(1);
        m
    }

    pub fn horizon(&self) -> usize {
        self.epsilon_series.len()
    }

    /// Smallest `k` with `ε = 0` from `k` to the end of the run; the zero
    /// suffix must span at least `window` steps.
    pub fn convergence_step(&self, window: usize) -> Option<usize> {
        convergence_index(&self.epsilon_series, window)
    }

    /// A run is conforming when no departure lost its mass.
    pub fn is_conforming(&self) -> bool {
        self.violation_steps.is_empty()
    }

    pub fn first_audit_failure(&self) -> Option<usize> {
        self.audit_failure_steps.first().copied()
    }
}

/// One row of the aggregated per-step table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub k: usize,
    pub epsilon_mean: f64,
    pub epsilon_min: i64,
    pub epsilon_max: i64,
    pub n_active: f64,
    pub q_target_num: String,
    pub q_target_den: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStats {
    pub converged: usize,
    pub not_converged: usize,
    pub min: Option<usize>,
    pub median: Option<f64>,
    pub max: Option<usize>,
    pub mean: Option<f64>,
}

impl ConvergenceStats {
    pub fn from_steps(steps: impl IntoIterator<Item = Option<usize>>) -> Self {
        let mut not_converged = 0;
        let mut done: Vec<usize> = Vec::new();
        for s in steps {
            match s {
                Some(k) => done.push(k),
                None => not_converged += 1,
            }
        }
        done.sort_unstable();
        let n = done.len();
        ConvergenceStats {
            converged: n,
            not_converged,
            min: done.first().copied(),
            median: median(&done),
            max: done.last().copied(),
            mean: (n > 0).then(|| done.iter().sum::<usize>() as f64 / n as f64),
        }
    }
}

/// Median of sorted values, averaging the middle pair.
pub fn median(sorted: &[usize]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2] as f64),
        _ => Some((sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub runs: usize,
    pub horizon: usize,
    pub steps: Vec<StepSummary>,
    pub convergence: ConvergenceStats,
    pub runs_with_violations: usize,
    pub conforming_audit_failures: usize,
}

/// Per-step statistics across runs of equal length.
pub fn aggregate(runs: &[RunMetrics]) -> Result<Summary> {
    let first = runs.first().ok_or(Error::EmptyRunList)?;
    let horizon = first.horizon();
    if let Some(bad) = runs.iter().find(|r| r.horizon() != horizon) {
        return Err(Error::MixedHorizons {
            expected: horizon,
            found: bad.horizon(),
        });
    }
    let count = runs.len();
    let steps = (0..horizon)
        .map(|k| {
            let eps = runs.iter().map(|r| r.epsilon_series[k]);
            let q_sum = runs.iter().fold(BigRational::zero(), |acc, r| {
                let q = r.target_series[k];
                acc + BigRational::new(BigInt::from(*q.numer()), BigInt::from(*q.denom()))
            });
            let q_mean = q_sum / BigInt::from(count);
            StepSummary {
                k,
                epsilon_mean: eps.clone().sum::<i64>() as f64 / count as f64,
                epsilon_min: eps.clone().min().unwrap_or(0),
                epsilon_max: eps.max().unwrap_or(0),
                n_active: runs.iter().map(|r| r.n_active[k]).sum::<usize>() as f64 / count as f64,
                q_target_num: q_mean.numer().to_string(),
                q_target_den: q_mean.denom().to_string(),
            }
        })
        .collect();
    Ok(Summary {
        runs: count,
        horizon,
        steps,
        convergence: ConvergenceStats::from_steps(runs.iter().map(|r| r.convergence_step)),
        runs_with_violations: runs.iter().filter(|r| !r.is_conforming()).count(),
        conforming_audit_failures: runs
            .iter()
            .filter(|r| r.is_conforming() && !r.audit_failure_steps.is_empty())
            .count(),
    })
}

impl StepSummary {
    pub fn q_target_f64(&self) -> Option<f64> {
        let num: BigInt = self.q_target_num.parse().ok()?;
        let den: BigInt = self.q_target_den.parse().ok()?;
        BigRational::new(num, den).to_f64()
    }
}

/// Outcome of re-checking a saved trace from its raw contents.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub steps: usize,
    /// Steps whose held plus in-flight mass differs from the target sums.
    pub conservation_failures: Vec<usize>,
    /// Steps whose recorded error metric differs from a recomputation.
    pub epsilon_mismatches: Vec<usize>,
    pub violation_steps: Vec<usize>,
}

impl AuditReport {
    pub fn first_failure(&self) -> Option<usize> {
        self.conservation_failures.first().copied()
    }

    /// Conservation may only fail in runs that lost a departure.
    pub fn passed(&self) -> bool {
        self.epsilon_mismatches.is_empty()
            && (self.conservation_failures.is_empty() || !self.violation_steps.is_empty())
    }
}

/// Re-derives targets, expected sums and errors from the initial values and
/// the schedule alone, then compares them against the recorded masses.
pub fn audit_trace(trace: &Trace) -> Result<AuditReport> {
    let mut report = AuditReport {
        steps: trace.steps.len(),
        violation_steps: trace.violations.iter().map(|v| v.step).collect(),
        ..AuditReport::default()
    };
    let mut historical = HistoricalSet::new();
    for (k, record) in trace.steps.iter().enumerate() {
        let active = trace.schedule.active(k);
        historical.extend(active);
        let recorded: BTreeSet<NodeId> = record.nodes.iter().map(|n| n.id).collect();
        if &recorded != active {
            return Err(Error::NodeSetMismatch { step: k });
        }
        let (q, expected) = if trace.algorithm.is_indefinitely_open() {
            (historical_average(&trace.x, &historical)?, expected_mass(&trace.x, historical.members()))
        } else {
            (active_average(&trace.x, active)?, expected_mass(&trace.x, active))
        };
        if !audit_mass_conservation(record, expected) {
            report.conservation_failures.push(k);
        }
        if epsilon(record.nodes.iter().map(|n| n.mass), q) != record.epsilon {
            report.epsilon_mismatches.push(k);
        }
    }
    Ok(report)
}
