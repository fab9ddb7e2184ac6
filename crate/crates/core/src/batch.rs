//! Multi-seed execution and result files.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::config::ScenarioConfig;
use crate::engine::{run, Trace};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, RunMetrics, Summary};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of run `i` in a batch.
pub fn derive_seed(master: u64, i: u64) -> u64 {
    splitmix64(master.wrapping_add(i.wrapping_mul(GOLDEN_GAMMA)))
}

#[derive(Debug, Clone)]
pub struct BatchResult {
    pub config: ScenarioConfig,
    pub master_seed: u64,
    pub runs: Vec<RunMetrics>,
    pub summary: Summary,
    /// Full traces, kept only when `config.write_traces` is set.
    pub traces: Vec<Trace>,
}

impl BatchResult {
    /// True iff a run without lost departures failed a conservation audit.
    pub fn has_conforming_audit_failure(&self) -> bool {
        self.summary.conforming_audit_failures > 0
    }
}

/// Runs `cfg.runs` seeds derived from `master_seed`, in parallel.
pub fn run_batch(cfg: &ScenarioConfig, master_seed: u64) -> Result<BatchResult> {
    cfg.validate()?;
    let kind = cfg.algorithm;
    let outcomes: Vec<(RunMetrics, Option<Trace>)> = (0..cfg.runs as u64)
        .into_par_iter()
        .map(|i| {
            let trace = run(cfg, kind, derive_seed(master_seed, i))?;
            let metrics = RunMetrics::from_trace(&trace);
            Ok((metrics, cfg.write_traces.then_some(trace)))
        })
        .collect::<Result<_>>()?;
    let (runs, traces): (Vec<RunMetrics>, Vec<Option<Trace>>) = outcomes.into_iter().unzip();
    let summary = aggregate(&runs)?;
    Ok(BatchResult {
        config: cfg.clone(),
        master_seed,
        runs,
        summary,
        traces: traces.into_iter().flatten().collect(),
    })
}

#[derive(Serialize)]
struct TraceRow<'a> {
    k: usize,
    n_active: usize,
    q_target: &'a str,
    epsilon: i64,
    sum_y: i64,
    sum_z: i64,
    violations: usize,
}

/// Per-step CSV of one run.
pub fn write_trace_csv(trace: &Trace, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(e, path))?;
    for s in &trace.steps {
        let q = format!("{}/{}", s.q_target.numer(), s.q_target.denom());
        w.serialize(TraceRow {
            k: s.k,
            n_active: s.nodes.len(),
            q_target: &q,
            epsilon: s.epsilon,
            sum_y: s.mass_sum.y,
            sum_z: s.mass_sum.z,
            violations: trace.violations.iter().filter(|v| v.step == s.k).count(),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Aggregated per-step CSV.
pub fn write_summary_csv(summary: &Summary, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(e, path))?;
    for row in &summary.steps {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_io(e: csv::Error, path: &Path) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidConfig(format!("{}: {other:?}", path.display())),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct SummaryDoc<'a> {
    config: &'a ScenarioConfig,
    master_seed: u64,
    seeds: Vec<u64>,
    convergence_steps: Vec<Option<usize>>,
    summary: &'a Summary,
}

/// Writes `summary.csv`, `summary.json` and, if kept, one JSON and one CSV
/// file per run. Returns the written paths.
pub fn write_outputs(result: &BatchResult, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let csv_path = dir.join("summary.csv");
    write_summary_csv(&result.summary, &csv_path)?;
    written.push(csv_path);

    let doc = SummaryDoc {
        config: &result.config,
        master_seed: result.master_seed,
        seeds: result.runs.iter().map(|r| r.seed).collect(),
        convergence_steps: result.runs.iter().map(|r| r.convergence_step).collect(),
        summary: &result.summary,
    };
    let json_path = dir.join("summary.json");
    write_text(&json_path, &serde_json::to_string_pretty(&doc)?)?;
    written.push(json_path);

    for (i, trace) in result.traces.iter().enumerate() {
        let stem = format!("run_{i:03}_{}", trace.seed);
        let json = dir.join(format!("{stem}.json"));
        write_text(&json, &trace.to_json()?)?;
        let csv = dir.join(format!("{stem}.csv"));
        write_trace_csv(trace, &csv)?;
        written.extend([json, csv]);
    }
    Ok(written)
}
