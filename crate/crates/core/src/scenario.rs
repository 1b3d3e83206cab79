//! Scenario files: strict TOML or JSON with documented defaults.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::comms::CommConfig;
use crate::error::{Error, Result};
use crate::marl::{EpsilonSchedule, LearnConfig, RewardWeights};
use crate::network::RoadNetwork;
use crate::signal::{ActuatedConfig, StaticSchedule};
use crate::sim::SimConfig;
use crate::train::{Controller, Experiment, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub n: usize,
    pub block_length: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            n: 5,
            block_length: 200.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Static,
    Actuated,
    Learned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub kind: ControllerKind,
    #[serde(rename = "static")]
    pub static_schedule: StaticSchedule,
    pub actuated: ActuatedConfig,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            kind: ControllerKind::Actuated,
            static_schedule: StaticSchedule::default(),
            actuated: ActuatedConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub grid: GridConfig,
    pub sim: SimConfig,
    pub controller: ControllerConfig,
    pub reward: RewardWeights,
    pub learn: LearnConfig,
    pub train: TrainConfig,
    pub comm: CommConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            seed: 0,
            output_dir: PathBuf::from("runs"),
            grid: GridConfig::default(),
            sim: SimConfig::default(),
            controller: ControllerConfig::default(),
            reward: RewardWeights::default(),
            learn: LearnConfig::default(),
            train: TrainConfig::default(),
            comm: CommConfig::default(),
        }
    }
}

/// Settings whose defaults are our own choices rather than published values.
pub const UNCALIBRATED_DEFAULTS: &[&str] = &[
    "seed",
    "grid.block_length",
    "sim.substeps",
    "sim.max_accel",
    "sim.yellow_decel",
    "sim.vehicle_length",
    "controller.kind",
    "controller.static",
    "controller.actuated.max_green",
    "controller.actuated.gap_threshold",
    "controller.actuated.queue_threshold",
    "reward",
    "learn.gamma",
    "learn.alpha",
    "learn.epsilon",
    "learn.target_mode",
    "train.policy_mode",
    "train.scope",
    "train.approximator",
    "train.eval_every",
    "train.warmup_steps",
    "train.sync_every",
    "train.replay_capacity",
    "train.eval_episodes",
    "train.eval_steps",
];

#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    /// Uncalibrated settings left at their defaults.
    pub defaulted: Vec<&'static str>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.grid.n == 0 {
            return Err(Error::config("grid.n", "must be at least 1"));
        }
        if !(self.grid.block_length > 0.0) {
            return Err(Error::config("grid.block_length", "must be positive"));
        }
        self.sim.validate()?;
        self.controller.actuated.validate()?;
        let s = self.controller.static_schedule;
        if !(s.ns_green > 0.0 && s.ew_green > 0.0) {
            return Err(Error::config(
                "controller.static",
                "green durations must be positive",
            ));
        }
        self.reward.validate()?;
        self.learn.validate()?;
        self.train.validate()?;
        self.comm.validate()?;
        Ok(())
    }

    pub fn network(&self) -> Result<RoadNetwork> {
        RoadNetwork::build_grid(self.grid.n, self.grid.block_length)
    }

    pub fn experiment(&self) -> Result<Experiment> {
        let mut sim = self.sim.clone();
        sim.rng_seed = self.seed;
        Ok(Experiment {
            net: Arc::new(self.network()?),
            sim,
            weights: self.reward,
            learn: self.learn.clone(),
            train: self.train.clone(),
            seed: self.seed,
        })
    }

    /// The rule-based controller named in the scenario, if any.
    pub fn rule_controller(&self, kind: ControllerKind) -> Option<Controller> {
        match kind {
            ControllerKind::Static => Some(Controller::Static(self.controller.static_schedule)),
            ControllerKind::Actuated => Some(Controller::Actuated(self.controller.actuated)),
            ControllerKind::Learned => None,
        }
    }
}

fn has_path(value: &serde_json::Value, path: &str) -> bool {
    let mut v = value;
    for part in path.split('.') {
        match v.get(part) {
            Some(next) => v = next,
            None => return false,
        }
    }
    true
}

/// Parses scenario text. `json` selects JSON, otherwise TOML.
pub fn parse_scenario(text: &str, json: bool) -> Result<LoadedScenario> {
    let value: serde_json::Value = if json {
        if text.trim().is_empty() {
            serde_json::Value::Object(Default::default())
        } else {
            serde_json::from_str(text)
                .map_err(|e| Error::config("", format!("JSON syntax: {e}")))?
        }
    } else {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| Error::config("", format!("TOML syntax: {e}")))?;
        serde_json::to_value(table)?
    };
    let mut scenario: Scenario = serde_path_to_error::deserialize(value.clone()).map_err(|e| {
        let path = e.path().to_string();
        Error::config(
            if path == "." { String::new() } else { path },
            e.into_inner().to_string(),
        )
    })?;
    if !has_path(&value, "learn.epsilon") {
        // Linear decay over the first tenth of training.
        scenario.learn.epsilon = EpsilonSchedule {
            start: 1.0,
            end: 0.02,
            decay_steps: scenario.train.total_steps() / 10,
        };
    }
    scenario.validate()?;
    let defaulted = UNCALIBRATED_DEFAULTS
        .iter()
        .copied()
        .filter(|p| !has_path(&value, p))
        .collect();
    Ok(LoadedScenario {
        scenario,
        defaulted,
    })
}

pub fn load_scenario(path: &Path) -> Result<LoadedScenario> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("", format!("cannot read {}: {e}", path.display())))?;
    let json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    parse_scenario(&text, json)
}
