//! Value-function approximators behind the per-signal Q-functions.

pub mod checkpoint;
pub mod features;
pub mod neural;
pub mod tabular;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Kind};
pub use features::{Encoding, FeatureLayout, ObservationScope};
pub use neural::{Mlp, NeuralConfig, NeuralQ};
pub use tabular::{Bins, TabularQ};

use crate::error::Result;
use crate::marl::{LearnConfig, Transition};

#[derive(Debug, Clone, PartialEq)]
pub enum Approximator {
    Tabular(TabularQ),
    Neural(NeuralQ),
}

impl Approximator {
    pub fn kind(&self) -> Kind {
        match self {
            Approximator::Tabular(_) => Kind::Tabular,
            Approximator::Neural(_) => Kind::Neural,
        }
    }

    /// `Q(s, ·)` for `agent` from the live parameters.
    pub fn q_values(&self, state: &[f64], agent: usize) -> Result<[f64; 2]> {
        match self {
            Approximator::Tabular(t) => t.q_values(state, agent),
            Approximator::Neural(n) => n.q_values(state, agent),
        }
    }

    /// Tabular: the blended update per transition. Neural: one optimizer
    /// step. `rate_scale` multiplies the learning rate. Returns the
    /// pre-update loss.
    pub fn batch_update(
        &mut self,
        batch: &[&Transition],
        cfg: &LearnConfig,
        rate_scale: f64,
    ) -> Result<f64> {
        match self {
            Approximator::Tabular(t) => t.batch_update(batch, cfg, rate_scale),
            Approximator::Neural(n) => n.batch_update(batch, cfg, rate_scale),
        }
    }
}

/// Which approximator to build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum ApproxSpec {
    Tabular {
        #[serde(default)]
        bins: Bins,
    },
    Neural {
        #[serde(default)]
        network: NeuralConfig,
    },
}

impl Default for ApproxSpec {
    fn default() -> Self {
        ApproxSpec::Tabular {
            bins: Bins::default(),
        }
    }
}

impl ApproxSpec {
    pub fn build(&self, encoding: Encoding) -> Result<Approximator> {
        Ok(match self {
            ApproxSpec::Tabular { bins } => Approximator::Tabular(TabularQ::new(encoding, *bins)?),
            ApproxSpec::Neural { network } => {
                Approximator::Neural(NeuralQ::new(encoding, network.clone())?)
            }
        })
    }
}

/// Single-transition update; identical to a batch of one.
pub fn q_update(
    approx: &mut Approximator,
    transition: &Transition,
    cfg: &LearnConfig,
) -> Result<f64> {
    approx.batch_update(&[transition], cfg, 1.0)
}
