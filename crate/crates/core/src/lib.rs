//! Grid traffic microsimulation with decentralized per-signal Q-learning.

pub mod approx;
pub mod comms;
pub mod env;
pub mod error;
pub mod marl;
pub mod network;
pub mod oracle;
pub mod scenario;
pub mod signal;
pub mod sim;
pub mod train;
pub mod verify;

pub use approx::{ApproxSpec, Approximator, Encoding, FeatureLayout, ObservationScope};
pub use env::{Env, StepOutcome};
pub use error::{Error, Result};
pub use marl::{GlobalObservation, JointAction, LearnConfig, RewardWeights};
pub use network::RoadNetwork;
pub use scenario::{load_scenario, parse_scenario, Scenario};
pub use signal::{ActuatedConfig, Phase, SignalState, StaticSchedule};
pub use sim::{MetricsRecord, SimConfig, WorldState};
pub use train::{Controller, Experiment, PolicySet, TrainConfig};
