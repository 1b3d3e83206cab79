//! Mapping raw global feature vectors to approximator inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marl::PhaseCode;
use crate::network::RoadNetwork;
use crate::sim::SimConfig;

/// What part of the global state an agent's value function sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObservationScope {
    /// The whole state plus the agent's index, so a shared approximator can
    /// still tell agents apart.
    Global,
    /// The agent's own incoming lanes (N, E, S, W) and its own phase code.
    Local,
}

/// Layout of the raw vector `[H.., ΔV.., θ codes..]` for one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub n_lanes: usize,
    pub n_signals: usize,
    pub scope: ObservationScope,
    /// Incoming lanes of every signal, by arrival side.
    pub agent_lanes: Vec<[usize; 4]>,
    pub v_max: f64,
    /// Vehicles that fit on one lane, used to normalize halting counts.
    pub lane_capacity: f64,
}

impl FeatureLayout {
    pub fn for_network(net: &RoadNetwork, sim: &SimConfig, scope: ObservationScope) -> Self {
        let agent_lanes = (0..net.num_intersections())
            .map(|c| net.intersections[c].incoming)
            .collect();
        FeatureLayout {
            n_lanes: net.num_signalized_lanes(),
            n_signals: net.num_intersections(),
            scope,
            agent_lanes,
            v_max: sim.v_max,
            lane_capacity: (net.block_length / (sim.vehicle_length + sim.min_gap))
                .floor()
                .max(1.0),
        }
    }

    pub fn raw_len(&self) -> usize {
        2 * self.n_lanes + self.n_signals
    }

    pub fn check(&self, state: &[f64], agent: usize) -> Result<()> {
        if state.len() != self.raw_len() {
            return Err(Error::InvalidArgument(format!(
                "state has {} features, layout expects {}",
                state.len(),
                self.raw_len()
            )));
        }
        if agent >= self.n_signals {
            return Err(Error::InvalidArgument(format!(
                "agent {agent} out of range"
            )));
        }
        Ok(())
    }

    /// Lanes the agent observes, in a fixed order.
    pub fn lanes_for(&self, agent: usize) -> Vec<usize> {
        match self.scope {
            ObservationScope::Global => (0..self.n_lanes).collect(),
            ObservationScope::Local => self.agent_lanes[agent].to_vec(),
        }
    }

    pub fn signals_for(&self, agent: usize) -> Vec<usize> {
        match self.scope {
            ObservationScope::Global => (0..self.n_signals).collect(),
            ObservationScope::Local => vec![agent],
        }
    }

    pub fn halting(&self, state: &[f64], lane: usize) -> f64 {
        state[lane]
    }

    pub fn speed_lag(&self, state: &[f64], lane: usize) -> f64 {
        state[self.n_lanes + lane]
    }

    pub fn phase_code(&self, state: &[f64], signal: usize) -> usize {
        (state[2 * self.n_lanes + signal] as usize).min(PhaseCode::COUNT - 1)
    }

    pub fn input_len(&self) -> usize {
        match self.scope {
            ObservationScope::Global => {
                2 * self.n_lanes + PhaseCode::COUNT * self.n_signals + self.n_signals
            }
            ObservationScope::Local => 2 * 4 + PhaseCode::COUNT,
        }
    }

    /// Normalized network input: `H/capacity`, `ΔV/v_max`, one-hot phase
    /// codes and, in global scope, a one-hot agent index.
    pub fn encode(&self, state: &[f64], agent: usize, out: &mut Vec<f64>) {
        out.clear();
        let lanes = self.lanes_for(agent);
        out.extend(
            lanes
                .iter()
                .map(|&m| self.halting(state, m) / self.lane_capacity),
        );
        out.extend(lanes.iter().map(|&m| self.speed_lag(state, m) / self.v_max));
        for c in self.signals_for(agent) {
            let code = self.phase_code(state, c);
            out.extend((0..PhaseCode::COUNT).map(|k| if k == code { 1.0 } else { 0.0 }));
        }
        if self.scope == ObservationScope::Global {
            out.extend((0..self.n_signals).map(|k| if k == agent { 1.0 } else { 0.0 }));
        }
    }
}

/// How an approximator interprets raw states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    Traffic(FeatureLayout),
    /// States used as given: small non-negative integers for tables, real
    /// vectors of the given width for networks. Used for finite MDPs.
    Raw {
        width: usize,
    },
}

impl Encoding {
    pub fn input_len(&self) -> usize {
        match self {
            Encoding::Traffic(l) => l.input_len(),
            Encoding::Raw { width } => *width,
        }
    }

    pub fn encode(&self, state: &[f64], agent: usize, out: &mut Vec<f64>) -> Result<()> {
        match self {
            Encoding::Traffic(l) => {
                l.check(state, agent)?;
                l.encode(state, agent, out);
            }
            Encoding::Raw { width } => {
                if state.len() != *width {
                    return Err(Error::InvalidArgument(format!(
                        "state has {} features, expected {width}",
                        state.len()
                    )));
                }
                out.clear();
                out.extend_from_slice(state);
            }
        }
        Ok(())
    }
}
