//! Exact lookup-table value function over a discretized state.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::approx::features::Encoding;
use crate::error::{Error, Result};
use crate::marl::{blend, td_target, LearnConfig, Transition};

/// Discretization of traffic features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Bins {
    /// Halting counts are clipped to `0..=h_max`.
    pub h_max: u16,
    /// Uniform bins over `[0, v_max]` for the speed lag.
    pub dv_bins: u16,
}

impl Default for Bins {
    fn default() -> Self {
        Bins {
            h_max: 10,
            dv_bins: 6,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Entry {
    pub q: [f64; 2],
    pub visits: [u64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularQ {
    pub encoding: Encoding,
    pub bins: Bins,
    pub(crate) table: HashMap<Box<[u16]>, Entry>,
}

impl TabularQ {
    pub fn new(encoding: Encoding, bins: Bins) -> Result<Self> {
        if bins.dv_bins == 0 {
            return Err(Error::InvalidArgument("dv_bins must be positive".into()));
        }
        Ok(TabularQ {
            encoding,
            bins,
            table: HashMap::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn key(&self, state: &[f64], agent: usize) -> Result<Box<[u16]>> {
        match &self.encoding {
            Encoding::Traffic(l) => {
                l.check(state, agent)?;
                let lanes = l.lanes_for(agent);
                let mut key = Vec::with_capacity(2 * lanes.len() + l.n_signals + 1);
                for &m in &lanes {
                    key.push(l.halting(state, m).min(f64::from(self.bins.h_max)) as u16);
                }
                let dv = f64::from(self.bins.dv_bins);
                for &m in &lanes {
                    let b = (l.speed_lag(state, m) / l.v_max * dv)
                        .floor()
                        .clamp(0.0, dv - 1.0);
                    key.push(b as u16);
                }
                for c in l.signals_for(agent) {
                    key.push(l.phase_code(state, c) as u16);
                }
                if l.scope == crate::approx::ObservationScope::Global {
                    key.push(agent as u16);
                }
                Ok(key.into_boxed_slice())
            }
            Encoding::Raw { width } => {
                if state.len() != *width {
                    return Err(Error::InvalidArgument(format!(
                        "state has {} features, expected {width}",
                        state.len()
                    )));
                }
                state
                    .iter()
                    .map(|&x| {
                        if x >= 0.0 && x <= f64::from(u16::MAX) && x.fract() == 0.0 {
                            Ok(x as u16)
                        } else {
                            Err(Error::InvalidArgument(format!(
                                "raw tabular feature {x} is not a small integer"
                            )))
                        }
                    })
                    .collect::<Result<Vec<_>>>()
                    .map(Vec::into_boxed_slice)
            }
        }
    }

    pub fn q_values(&self, state: &[f64], agent: usize) -> Result<[f64; 2]> {
        let key = self.key(state, agent)?;
        Ok(self.table.get(&key).map_or([0.0; 2], |e| e.q))
    }

    pub fn entry(&self, state: &[f64], agent: usize) -> Result<Entry> {
        let key = self.key(state, agent)?;
        Ok(self.table.get(&key).copied().unwrap_or_default())
    }

    /// Applies the blended update to every transition in order. Returns the
    /// mean squared temporal-difference error before each update.
    pub fn batch_update(
        &mut self,
        batch: &[&Transition],
        cfg: &LearnConfig,
        alpha_scale: f64,
    ) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let mut loss = 0.0;
        for t in batch {
            if !t.is_finite() {
                return Err(Error::NumericFault(format!(
                    "non-finite transition for agent {}",
                    t.agent
                )));
            }
            let next = self.q_values(&t.next_state, t.agent)?;
            let target = td_target(t.reward, next, t.next_action, cfg.gamma, cfg.target_mode);
            let key = self.key(&t.state, t.agent)?;
            let e = self.table.entry(key).or_default();
            let a = usize::from(t.action);
            e.visits[a] += 1;
            let alpha = (cfg.alpha.rate(e.visits[a]) * alpha_scale).clamp(0.0, 1.0);
            let err = target - e.q[a];
            loss += err * err;
            e.q[a] = blend(e.q[a], target, alpha);
            if !e.q[a].is_finite() {
                return Err(Error::NumericFault(format!(
                    "table value became {}",
                    e.q[a]
                )));
            }
        }
        Ok(loss / batch.len() as f64)
    }

    /// Entries sorted by key, for deterministic serialization.
    pub fn sorted_entries(&self) -> Vec<(&[u16], &Entry)> {
        let mut v: Vec<_> = self.table.iter().map(|(k, e)| (&k[..], e)).collect();
        v.sort_by(|a, b| a.0.cmp(b.0));
        v
    }

    pub(crate) fn insert(&mut self, key: Box<[u16]>, entry: Entry) {
        self.table.insert(key, entry);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marl::{LearningRate, TargetMode};
    use std::sync::Arc;

    fn cfg(alpha: f64, gamma: f64) -> LearnConfig {
        LearnConfig {
            gamma,
            alpha: LearningRate::Constant { value: alpha },
            target_mode: TargetMode::Sarsa,
            ..Default::default()
        }
    }

    fn transition(s: f64, a: u8, r: f64, s2: f64) -> Transition {
        Transition {
            state: Arc::from(vec![s]),
            agent: 0,
            action: a,
            reward: r,
            next_state: Arc::from(vec![s2]),
            next_action: 0,
        }
    }

    #[test]
    fn fresh_table_reads_zero() {
        let q = TabularQ::new(Encoding::Raw { width: 1 }, Bins::default()).unwrap();
        assert_eq!(q.q_values(&[3.0], 0).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn single_update_matches_rule() {
        let mut q = TabularQ::new(Encoding::Raw { width: 1 }, Bins::default()).unwrap();
        let t = transition(0.0, 1, -4.0, 1.0);
        q.batch_update(&[&t], &cfg(0.5, 0.9), 1.0).unwrap();
        let v = q.q_values(&[0.0], 0).unwrap();
        assert_eq!(v[0], 0.0);
        assert!((v[1] - -0.2).abs() < 1e-15);
    }

    #[test]
    fn unit_rate_gives_scaled_reward() {
        let mut q = TabularQ::new(Encoding::Raw { width: 1 }, Bins::default()).unwrap();
        let t = transition(0.0, 0, 3.0, 1.0);
        q.batch_update(&[&t], &cfg(1.0, 0.75), 1.0).unwrap();
        assert_eq!(q.q_values(&[0.0], 0).unwrap()[0], 0.25 * 3.0);
    }

    #[test]
    fn converged_batch_has_zero_loss() {
        let mut q = TabularQ::new(Encoding::Raw { width: 1 }, Bins::default()).unwrap();
        let t = transition(0.0, 0, 0.0, 0.0);
        let loss = q.batch_update(&[&t, &t], &cfg(0.5, 0.9), 1.0).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(q.q_values(&[0.0], 0).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn raw_keys_must_be_integers() {
        let q = TabularQ::new(Encoding::Raw { width: 1 }, Bins::default()).unwrap();
        assert!(q.q_values(&[0.5], 0).is_err());
        assert!(q.q_values(&[-1.0], 0).is_err());
    }
}
