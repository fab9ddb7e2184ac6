use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use omas_core::algorithms::AlgorithmKind;
use omas_core::batch::{run_batch, write_outputs};
use omas_core::config::{preset, ScenarioConfig, TauBar, PRESET_NAMES};
use omas_core::engine::Trace;
use omas_core::metrics::audit_trace;
use omas_core::topology::{
    departure_condition_failures, union_digraph, verify_t_joint_connectivity, DepartureKnowledge,
};

/// Quantized average consensus simulator for open multi-agent networks.
#[derive(Parser)]
#[command(name = "omas", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch of seeded simulations and write summaries.
    Run(RunArgs),
    /// Re-run the conservation and error audits on a saved trace.
    Verify {
        #[arg(long)]
        trace: PathBuf,
    },
    /// Check the departure and connectivity conditions of a saved trace.
    Graphcheck {
        #[arg(long)]
        trace: PathBuf,
        /// Window length for the joint connectivity check; defaults to the
        /// number of instances.
        #[arg(long)]
        window: Option<usize>,
    },
    /// Print a preset as JSON.
    Preset { name: String },
}

#[derive(clap::Args)]
struct RunArgs {
    /// Built-in scenario to start from.
    #[arg(long, default_value = "scenario1")]
    preset: String,
    /// JSON config file; replaces the preset.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_algorithm)]
    algorithm: Option<AlgorithmKind>,
    /// Number of seeded runs.
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    tau_bar: Option<u32>,
    #[arg(long, default_value_t = 0)]
    master_seed: u64,
    #[arg(long)]
    horizon: Option<usize>,
    /// Remove every qualifying out-edge of the departing nodes at one step.
    #[arg(long)]
    violate: bool,
    /// Also write every run's full trace.
    #[arg(long)]
    traces: bool,
}

fn parse_algorithm(s: &str) -> Result<AlgorithmKind, String> {
    s.parse().map_err(|e: omas_core::Error| e.to_string())
}

fn build_config(args: &RunArgs) -> Result<ScenarioConfig> {
    let mut cfg = match &args.config {
        Some(path) => ScenarioConfig::from_json_file(path)?,
        None => preset(&args.preset)?,
    };
    if let Some(kind) = args.algorithm {
        cfg.algorithm = kind;
    }
    if let Some(n) = args.seeds {
        cfg.runs = n;
    }
    if let Some(t) = args.tau_bar {
        cfg.tau_bar = TauBar::Global(t);
    }
    if let Some(h) = args.horizon {
        cfg.horizon = h;
    }
    if let Some(dir) = &args.out {
        cfg.output_dir = Some(dir.clone());
    }
    cfg.violate_departure_condition |= args.violate;
    cfg.write_traces |= args.traces;
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_run(args: &RunArgs) -> Result<ExitCode> {
    let cfg = build_config(args)?;
    let result = run_batch(&cfg, args.master_seed)?;
    let s = &result.summary;
    let c = &s.convergence;
    println!(
        "{} {} runs={} horizon={}",
        cfg.name, cfg.algorithm, s.runs, s.horizon
    );
    println!(
        "converged={} not_converged={} min={:?} median={:?} max={:?} mean={:?}",
        c.converged, c.not_converged, c.min, c.median, c.max, c.mean
    );
    println!(
        "runs_with_violations={} conforming_audit_failures={}",
        s.runs_with_violations, s.conforming_audit_failures
    );
    if let Some(dir) = &cfg.output_dir {
        let written = write_outputs(&result, dir)?;
        println!("wrote {} files to {}", written.len(), dir.display());
    }
    Ok(if result.has_conforming_audit_failure() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    })
}

fn load_trace(path: &Path) -> Result<Trace> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Trace::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn cmd_verify(path: &Path) -> Result<ExitCode> {
    let trace = load_trace(path)?;
    let report = audit_trace(&trace)?;
    println!("{} seed={} steps={}", trace.algorithm, trace.seed, report.steps);
    println!("violations at steps {:?}", report.violation_steps);
    match report.first_failure() {
        Some(k) => println!(
            "conservation fails at {} steps, first at step {k}",
            report.conservation_failures.len()
        ),
        None => println!("conservation holds at every step"),
    }
    if !report.epsilon_mismatches.is_empty() {
        println!("error metric differs at steps {:?}", report.epsilon_mismatches);
    }
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn cmd_graphcheck(path: &Path, window: Option<usize>) -> Result<ExitCode> {
    let trace = load_trace(path)?;
    trace.topology.validate(&trace.schedule)?;
    let knowledge = DepartureKnowledge::exact(&trace.schedule, trace.tau_bar.clone())?;
    let long_term = trace.algorithm == AlgorithmKind::Qapod;
    let failures = departure_condition_failures(&trace.schedule, &knowledge, &trace.topology, long_term);
    let mut ok = failures.is_empty();
    if failures.is_empty() {
        println!("departure condition holds at every step");
    } else {
        println!("departure condition fails for {} departures:", failures.len());
        for (k, v) in &failures {
            println!("  step {k} node {v}");
        }
    }

    match (trace.schedule.stabilization_step(), &trace.topology.instances) {
        (Some(ks), Some(instances)) if ks < trace.topology.horizon() => {
            let union_ok = union_digraph(instances)?.is_strongly_connected();
            ok &= union_ok;
            println!("instance union strongly connected: {union_ok}");
            let t = window.unwrap_or(instances.len());
            if ks + t <= trace.topology.horizon() {
                let joint = verify_t_joint_connectivity(&trace.topology, ks, t)?;
                println!("every {t}-step window from step {ks} strongly connected: {joint}");
            }
        }
        _ => println!("no stable phase"),
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Verify { trace } => cmd_verify(&trace),
        Command::Graphcheck { trace, window } => cmd_graphcheck(&trace, window),
        Command::Preset { name } => {
            if !PRESET_NAMES.contains(&name.as_str()) {
                bail!("unknown preset {name:?}; known presets: {}", PRESET_NAMES.join(", "));
            }
            println!("{}", serde_json::to_string_pretty(&preset(&name)?)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}
