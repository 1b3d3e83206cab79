//! One simulation instance seen as a multi-agent environment.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::marl::{
    assemble_state, exact_sum, rewards_per_signal, GlobalObservation, JointAction, RewardWeights,
    WeightScheme,
};
use crate::network::RoadNetwork;
use crate::signal::{
    actuated_controller, advance_phase, static_controller, ActuatedConfig, Indication,
    SignalAction, SignalState, StaticSchedule,
};
use crate::sim::{
    inject_inflow, observe_lanes, snapshot_metrics, step_vehicles, trajectory_rows,
    LaneObservation, MetricsRecord, SimConfig, TrajectoryRow, WorldState,
};

#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// Per-agent local rewards.
    pub rewards: Vec<f64>,
    /// Sum of the local rewards.
    pub reward: f64,
    pub metrics: MetricsRecord,
}

#[derive(Debug, Clone)]
pub struct Env {
    net: Arc<RoadNetwork>,
    sim: SimConfig,
    weights: RewardWeights,
    scheme: WeightScheme,
    /// Agents see the state of the previous step.
    delayed_observation: bool,
    signals: Vec<SignalState>,
    world: WorldState,
    rng: ChaCha8Rng,
    lanes: Vec<LaneObservation>,
    obs: GlobalObservation,
    previous: GlobalObservation,
}

impl Env {
    pub fn new(
        net: Arc<RoadNetwork>,
        sim: SimConfig,
        weights: RewardWeights,
        scheme: WeightScheme,
    ) -> Result<Self> {
        sim.validate()?;
        let seed = sim.rng_seed;
        let world = WorldState::new(&net);
        let signals = (0..net.num_intersections())
            .map(SignalState::new)
            .collect::<Vec<_>>();
        let lanes = observe_lanes(&world, &net, &sim);
        let obs = assemble_state(0, &lanes, &signals, &net)?;
        let mut env = Env {
            net,
            sim,
            weights,
            scheme,
            delayed_observation: false,
            signals,
            world,
            rng: ChaCha8Rng::seed_from_u64(seed),
            lanes,
            previous: obs.clone(),
            obs,
        };
        env.reset(seed);
        Ok(env)
    }

    pub fn with_delayed_observation(mut self, on: bool) -> Self {
        self.delayed_observation = on;
        self
    }

    /// Empty network, every signal at the start of its first green.
    pub fn reset(&mut self, seed: u64) -> &GlobalObservation {
        self.world = WorldState::new(&self.net);
        self.signals = (0..self.net.num_intersections())
            .map(SignalState::new)
            .collect();
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.lanes = observe_lanes(&self.world, &self.net, &self.sim);
        self.obs =
            assemble_state(0, &self.lanes, &self.signals, &self.net).expect("consistent shapes");
        self.previous = self.obs.clone();
        self.observation()
    }

    pub fn network(&self) -> &Arc<RoadNetwork> {
        &self.net
    }

    pub fn sim_config(&self) -> &SimConfig {
        &self.sim
    }

    pub fn agents(&self) -> usize {
        self.signals.len()
    }

    /// The state the agents act on.
    pub fn observation(&self) -> &GlobalObservation {
        if self.delayed_observation {
            &self.previous
        } else {
            &self.obs
        }
    }

    pub fn lane_observations(&self) -> &[LaneObservation] {
        &self.lanes
    }

    pub fn signals(&self) -> &[SignalState] {
        &self.signals
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn trajectory(&self) -> Vec<TrajectoryRow> {
        trajectory_rows(&self.world, &self.net)
    }

    /// Applies the joint action, advances the traffic by one step and
    /// returns the rewards of the resulting state.
    pub fn step(&mut self, action: &JointAction) -> Result<StepOutcome> {
        if action.len() != self.signals.len() {
            return Err(Error::InvalidArgument(format!(
                "joint action has {} entries, expected {}",
                action.len(),
                self.signals.len()
            )));
        }
        for (sig, &a) in self.signals.iter_mut().zip(&action.0) {
            *sig = advance_phase(*sig, SignalAction::from_bit(a), self.sim.dt);
        }
        inject_inflow(&mut self.world, &self.net, &self.sim, &mut self.rng);
        step_vehicles(&mut self.world, &self.net, &self.signals, &self.sim)?;
        self.lanes = observe_lanes(&self.world, &self.net, &self.sim);
        let obs = assemble_state(self.world.step, &self.lanes, &self.signals, &self.net)?;
        self.previous = std::mem::replace(&mut self.obs, obs);
        let rewards = rewards_per_signal(&self.obs, &self.net, &self.weights, self.scheme);
        let reward = exact_sum(rewards.iter().copied());
        let metrics = snapshot_metrics(&self.world, &self.net, &self.sim);
        Ok(StepOutcome {
            rewards,
            reward,
            metrics,
        })
    }

    /// Lane observations split into the lanes shown green and those shown
    /// red at intersection `c`.
    fn served_and_waiting(&self, c: usize) -> (Vec<LaneObservation>, Vec<LaneObservation>) {
        let inter = &self.net.intersections[c];
        let phase = self.signals[c].phase;
        let mut served = Vec::new();
        let mut waiting = Vec::new();
        for (side, &lane) in inter.incoming.iter().enumerate() {
            match phase.indication(side) {
                Indication::Green => served.push(self.lanes[lane].clone()),
                Indication::Red => waiting.push(self.lanes[lane].clone()),
                Indication::Yellow => {}
            }
        }
        (served, waiting)
    }

    pub fn static_actions(&self, schedule: &StaticSchedule) -> JointAction {
        JointAction(
            self.signals
                .iter()
                .map(|s| static_controller(s, schedule).bit())
                .collect(),
        )
    }

    pub fn actuated_actions(&self, cfg: &ActuatedConfig) -> JointAction {
        JointAction(
            (0..self.signals.len())
                .map(|c| {
                    let (served, waiting) = self.served_and_waiting(c);
                    actuated_controller(&self.signals[c], &served, &waiting, cfg).bit()
                })
                .collect(),
        )
    }
}
