//! Scenario parameters and the built-in presets.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::algorithms::AlgorithmKind;
use crate::error::{Error, Result};

/// Maximum processing delay, shared by all nodes or given per node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauBar {
    Global(u32),
    PerNode(Vec<u32>),
}

/// How the stable phase picks its instance at each step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceSelection {
    /// Independent uniform draw per step.
    #[default]
    Iid,
    /// Instances in order, wrapping around.
    RoundRobin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub n_total: usize,
    pub n_active_initial: usize,
    pub churn_rate: f64,
    pub perturb_up_prob: f64,
    /// Step from which membership stays fixed. Ignored by `qaiod`.
    pub stabilization_step: Option<usize>,
    /// Number of stable-phase topology instances.
    pub instances: usize,
    pub tau_bar: TauBar,
    pub horizon: usize,
    pub runs: usize,
    pub algorithm: AlgorithmKind,
    pub violate_departure_condition: bool,
    pub initial_value_min: i64,
    pub initial_value_max: i64,
    /// Random out-neighbors per node while the network churns.
    pub out_degree: usize,
    /// Random out-neighbors per node in each stable-phase instance.
    pub instance_out_degree: usize,
    pub instance_selection: InstanceSelection,
    pub output_dir: Option<PathBuf>,
    pub write_traces: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "scenario1".into(),
            n_total: 150,
            n_active_initial: 100,
            churn_rate: 0.1,
            perturb_up_prob: 0.55,
            stabilization_step: Some(80),
            instances: 20,
            tau_bar: TauBar::Global(5),
            horizon: 300,
            runs: 100,
            algorithm: AlgorithmKind::Qaod,
            violate_departure_condition: false,
            initial_value_min: 1,
            initial_value_max: 10,
            out_degree: 1,
            instance_out_degree: 3,
            instance_selection: InstanceSelection::Iid,
            output_dir: None,
            write_traces: false,
        }
    }
}

pub const PRESET_NAMES: [&str; 7] = [
    "scenario1",
    "scenario2a",
    "scenario2b",
    "scenario2c",
    "scenario3a",
    "scenario3b",
    "desk",
];

/// Built-in scenario by name.
pub fn preset(name: &str) -> Result<ScenarioConfig> {
    let base = ScenarioConfig::default();
    let with = |n_total, n_active_initial, churn_rate| ScenarioConfig {
        name: name.to_string(),
        n_total,
        n_active_initial,
        churn_rate,
        ..base.clone()
    };
    let cfg = match name {
        "scenario1" => with(150, 100, 0.1),
        "scenario2a" => with(150, 100, 0.1),
        "scenario2b" => with(300, 250, 0.1),
        "scenario2c" => with(600, 500, 0.1),
        "scenario3a" => with(150, 100, 0.1),
        "scenario3b" => with(150, 100, 0.5),
        "desk" => ScenarioConfig {
            stabilization_step: Some(60),
            instances: 10,
            runs: 50,
            ..with(50, 30, 0.1)
        },
        _ => {
            return Err(Error::UnknownPreset {
                name: name.to_string(),
                known: PRESET_NAMES.join(", "),
            })
        }
    };
    Ok(cfg)
}

impl ScenarioConfig {
    pub fn with_algorithm(mut self, algorithm: AlgorithmKind) -> Self {
        self.algorithm = algorithm;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(0.0..=1.0).contains(&self.churn_rate) {
            return bad(format!("churn_rate {} is outside [0, 1]", self.churn_rate));
        }
        if !(0.0..=1.0).contains(&self.perturb_up_prob) {
            return bad(format!("perturb_up_prob {} is outside [0, 1]", self.perturb_up_prob));
        }
        if self.n_active_initial == 0 || self.n_active_initial > self.n_total {
            return bad(format!(
                "n_active_initial {} must be in 1..={}",
                self.n_active_initial, self.n_total
            ));
        }
        if self.horizon == 0 {
            return bad("horizon must be positive".into());
        }
        if let Some(ks) = self.stabilization_step {
            if ks >= self.horizon {
                return bad(format!("horizon {} must exceed the stabilization step {ks}", self.horizon));
            }
        }
        if self.instances == 0 {
            return bad("at least one topology instance is required".into());
        }
        if let TauBar::PerNode(v) = &self.tau_bar {
            if v.len() != self.n_total {
                return bad(format!("{} per-node delay bounds for {} nodes", v.len(), self.n_total));
            }
        }
        if self.initial_value_min > self.initial_value_max {
            return bad("initial value range is empty".into());
        }
        if self.out_degree == 0 || self.instance_out_degree == 0 {
            return bad("out-degrees must be positive".into());
        }
        Ok(())
    }

    /// Stabilization step actually used for `algorithm`.
    pub fn effective_stabilization(&self) -> Option<usize> {
        if self.algorithm.is_indefinitely_open() {
            None
        } else {
            self.stabilization_step
        }
    }

    /// Per-node delay bounds; only the delay-tolerant variant has delays.
    pub fn tau_bars(&self) -> Vec<u32> {
        if self.algorithm != AlgorithmKind::Qapod {
            return vec![0; self.n_total];
        }
        match &self.tau_bar {
            TauBar::Global(t) => vec![*t; self.n_total],
            TauBar::PerNode(v) => v.clone(),
        }
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ScenarioConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
