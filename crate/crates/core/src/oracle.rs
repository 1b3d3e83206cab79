//! Exact solvers for small multi-agent MDPs: policy evaluation by a linear
//! solve, value iteration, the decomposition residual, and a decentralized
//! tabular learner to compare against them.
//!
//! Values use the normalized convention `Q = (1−γ)·R + γ·P·V`, the same one
//! the learners use.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::approx::{Bins, Encoding, TabularQ};
use crate::error::{Error, Result};
use crate::marl::{
    greedy, EpsilonSchedule, JointAction, LearnConfig, LearningRate, TargetMode, Transition,
};

/// Largest supported number of (state, joint action) pairs.
pub const MAX_PAIRS: usize = 1_000_000;

/// Joint actions are indexed `0..2^C`; bit `c` is agent `c`'s action.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    pub states: usize,
    pub agents: usize,
    pub gamma: f64,
    /// `transitions[s][a][s′]`.
    pub transitions: Vec<Vec<Vec<f64>>>,
    /// `rewards[c][s][a]`.
    pub rewards: Vec<Vec<Vec<f64>>>,
    /// Global reward used instead of `Σ_c rewards[c]` when set.
    pub global_reward: Option<Vec<Vec<f64>>>,
}

/// A distribution over joint actions for every state.
pub type JointPolicy = Vec<Vec<f64>>;

impl FiniteMdp {
    pub fn joint_actions(&self) -> usize {
        1 << self.agents
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidArgument(format!(
                "gamma {} outside [0, 1)",
                self.gamma
            )));
        }
        if self.states == 0 || self.agents == 0 || self.agents > 20 {
            return Err(Error::InvalidArgument(
                "need at least one state and 1..=20 agents".into(),
            ));
        }
        let na = self.joint_actions();
        if self.states.saturating_mul(na) > MAX_PAIRS {
            return Err(Error::InvalidArgument(format!(
                "{} state-action pairs exceed the limit of {MAX_PAIRS}",
                self.states * na
            )));
        }
        if self.transitions.len() != self.states || self.rewards.len() != self.agents {
            return Err(Error::InvalidArgument(
                "kernel or reward shape mismatch".into(),
            ));
        }
        for (s, rows) in self.transitions.iter().enumerate() {
            if rows.len() != na {
                return Err(Error::InvalidArgument(format!(
                    "state {s} has {} action rows",
                    rows.len()
                )));
            }
            for (a, row) in rows.iter().enumerate() {
                let total: f64 = row.iter().sum();
                if row.len() != self.states
                    || row.iter().any(|&p| !(p >= 0.0))
                    || (total - 1.0).abs() > 1e-12
                {
                    return Err(Error::InvalidArgument(format!(
                        "row ({s}, {a}) is not a distribution"
                    )));
                }
            }
        }
        let reward_tables = self.rewards.iter().chain(self.global_reward.iter());
        for r in reward_tables {
            if r.len() != self.states
                || r.iter()
                    .any(|row| row.len() != na || row.iter().any(|x| !x.is_finite()))
            {
                return Err(Error::InvalidArgument(
                    "reward table malformed or non-finite".into(),
                ));
            }
        }
        Ok(())
    }

    /// Global reward `R(s, a)`.
    pub fn global(&self, s: usize, a: usize) -> f64 {
        match &self.global_reward {
            Some(g) => g[s][a],
            None => self.rewards.iter().map(|r| r[s][a]).sum(),
        }
    }

    /// Samples the successor of `(s, a)`.
    pub fn sample_next<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let row = &self.transitions[s][a];
        for (next, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return next;
            }
        }
        row.iter()
            .rposition(|&p| p > 0.0)
            .unwrap_or(self.states - 1)
    }
}

pub fn deterministic_policy(actions: &[usize], joint_actions: usize) -> JointPolicy {
    actions
        .iter()
        .map(|&a| {
            (0..joint_actions)
                .map(|b| if a == b { 1.0 } else { 0.0 })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEvaluation {
    /// `V(s)` for the global reward.
    pub v: Vec<f64>,
    /// `Q(s, a)` for the global reward.
    pub q: Vec<Vec<f64>>,
    /// `Q_c(s, a)` for each agent's reward.
    pub q_agents: Vec<Vec<Vec<f64>>>,
}

/// Solves `(I − γ·P_π)·V = (1−γ)·R_π` directly, for the global reward and
/// each agent's reward, then forms the action values.
pub fn evaluate_policy(mdp: &FiniteMdp, policy: &JointPolicy) -> Result<PolicyEvaluation> {
    mdp.validate()?;
    let (ns, na, g) = (mdp.states, mdp.joint_actions(), mdp.gamma);
    if policy.len() != ns || policy.iter().any(|row| row.len() != na) {
        return Err(Error::InvalidArgument(
            "policy shape does not match the MDP".into(),
        ));
    }
    for row in policy {
        let total: f64 = row.iter().sum();
        if row.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(
                "policy row is not a distribution".into(),
            ));
        }
    }

    let mut matrix = vec![vec![0.0; ns]; ns];
    for s in 0..ns {
        matrix[s][s] = 1.0;
        for a in 0..na {
            let pa = policy[s][a];
            if pa == 0.0 {
                continue;
            }
            for (t, &p) in mdp.transitions[s][a].iter().enumerate() {
                matrix[s][t] -= g * pa * p;
            }
        }
    }
    let reward_fns: Vec<Box<dyn Fn(usize, usize) -> f64 + '_>> =
        std::iter::once(Box::new(|s, a| mdp.global(s, a)) as Box<dyn Fn(usize, usize) -> f64>)
            .chain((0..mdp.agents).map(|c| {
                Box::new(move |s: usize, a: usize| mdp.rewards[c][s][a])
                    as Box<dyn Fn(usize, usize) -> f64>
            }))
            .collect();
    let rhs: Vec<Vec<f64>> = reward_fns
        .iter()
        .map(|r| {
            (0..ns)
                .map(|s| (1.0 - g) * (0..na).map(|a| policy[s][a] * r(s, a)).sum::<f64>())
                .collect()
        })
        .collect();
    let values = solve_linear(matrix, rhs)?;

    let action_values = |r: &dyn Fn(usize, usize) -> f64, v: &[f64]| -> Vec<Vec<f64>> {
        (0..ns)
            .map(|s| {
                (0..na)
                    .map(|a| {
                        let next: f64 = mdp.transitions[s][a]
                            .iter()
                            .zip(v)
                            .map(|(p, x)| p * x)
                            .sum();
                        (1.0 - g) * r(s, a) + g * next
                    })
                    .collect()
            })
            .collect()
    };
    let q = action_values(&*reward_fns[0], &values[0]);
    let q_agents = (0..mdp.agents)
        .map(|c| action_values(&*reward_fns[c + 1], &values[c + 1]))
        .collect();
    Ok(PolicyEvaluation {
        v: values[0].clone(),
        q,
        q_agents,
    })
}

/// Gaussian elimination with partial pivoting for several right-hand sides.
pub fn solve_linear(mut a: Vec<Vec<f64>>, mut rhs: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        if a[pivot][col].abs() < 1e-300 {
            return Err(Error::NumericFault("singular system".into()));
        }
        a.swap(col, pivot);
        for b in rhs.iter_mut() {
            b.swap(col, pivot);
        }
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            for b in rhs.iter_mut() {
                b[row] -= f * b[col];
            }
        }
    }
    for b in rhs.iter_mut() {
        for row in (0..n).rev() {
            let s: f64 = (row + 1..n).map(|k| a[row][k] * b[k]).sum();
            b[row] = (b[row] - s) / a[row][row];
        }
    }
    Ok(rhs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub q: Vec<Vec<f64>>,
    /// Greedy joint action per state, ties to the lowest index.
    pub policy: Vec<usize>,
    /// Sup-norm change of every sweep.
    pub residuals: Vec<f64>,
}

/// Value iteration on the normalized optimality operator until the sup-norm
/// change falls below `1e-10`.
pub fn value_iterate(mdp: &FiniteMdp) -> Result<Optimum> {
    mdp.validate()?;
    let (ns, na, g) = (mdp.states, mdp.joint_actions(), mdp.gamma);
    let reward: Vec<Vec<f64>> = (0..ns)
        .map(|s| (0..na).map(|a| (1.0 - g) * mdp.global(s, a)).collect())
        .collect();
    let mut q = reward.clone();
    let mut residuals = Vec::new();
    loop {
        let v: Vec<f64> = q
            .iter()
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let mut delta: f64 = 0.0;
        for s in 0..ns {
            for a in 0..na {
                let next: f64 = mdp.transitions[s][a]
                    .iter()
                    .zip(&v)
                    .map(|(p, x)| p * x)
                    .sum();
                let new = reward[s][a] + g * next;
                delta = delta.max((new - q[s][a]).abs());
                q[s][a] = new;
            }
        }
        residuals.push(delta);
        if delta < 1e-10 || residuals.len() > 1_000_000 {
            break;
        }
    }
    let policy = q.iter().map(|row| argmax_lowest(row)).collect();
    Ok(Optimum {
        q,
        policy,
        residuals,
    })
}

fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// `max |Q(s,a) − Σ_c Q_c(s,a)|` under `policy`.
pub fn decomposition_check(mdp: &FiniteMdp, policy: &JointPolicy) -> Result<f64> {
    let e = evaluate_policy(mdp, policy)?;
    let mut worst: f64 = 0.0;
    for s in 0..mdp.states {
        for a in 0..mdp.joint_actions() {
            let sum: f64 = e.q_agents.iter().map(|qc| qc[s][a]).sum();
            worst = worst.max((e.q[s][a] - sum).abs());
        }
    }
    Ok(worst)
}

fn random_distribution<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
    let total: f64 = raw.iter().sum();
    let mut row: Vec<f64> = raw.iter().map(|x| x / total).collect();
    // Put the rounding remainder on the largest entry.
    let err = 1.0 - row.iter().sum::<f64>();
    let k = argmax_lowest(&row);
    row[k] += err;
    row
}

/// Dense random kernel with independent uniform rewards in `[-1, 1]` per
/// agent. Dynamics couple all agents.
pub fn random_additive(seed: u64, states: usize, agents: usize, gamma: f64) -> FiniteMdp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let na = 1 << agents;
    let transitions = (0..states)
        .map(|_| {
            (0..na)
                .map(|_| random_distribution(states, &mut rng))
                .collect()
        })
        .collect();
    let rewards = (0..agents)
        .map(|_| {
            (0..states)
                .map(|_| (0..na).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect()
        })
        .collect();
    FiniteMdp {
        states,
        agents,
        gamma,
        transitions,
        rewards,
        global_reward: None,
    }
}

/// Product of independent per-agent MDPs: agent `c` has `local_states[c]`
/// states, and its transitions and reward depend only on its own state and
/// action. The joint state index is mixed-radix with agent 0 varying fastest.
pub fn random_factored(seed: u64, local_states: &[usize], gamma: f64) -> FiniteMdp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let agents = local_states.len();
    let local_p: Vec<Vec<[Vec<f64>; 2]>> = local_states
        .iter()
        .map(|&n| {
            (0..n)
                .map(|_| {
                    [
                        random_distribution(n, &mut rng),
                        random_distribution(n, &mut rng),
                    ]
                })
                .collect()
        })
        .collect();
    let local_r: Vec<Vec<[f64; 2]>> = local_states
        .iter()
        .map(|&n| {
            (0..n)
                .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
                .collect()
        })
        .collect();

    let states: usize = local_states.iter().product();
    let na = 1 << agents;
    let decode = |mut s: usize| -> Vec<usize> {
        local_states
            .iter()
            .map(|&n| {
                let x = s % n;
                s /= n;
                x
            })
            .collect()
    };
    let mut transitions = vec![vec![vec![0.0; states]; na]; states];
    let mut rewards = vec![vec![vec![0.0; na]; states]; agents];
    for s in 0..states {
        let ls = decode(s);
        for a in 0..na {
            for t in 0..states {
                let lt = decode(t);
                transitions[s][a][t] = (0..agents)
                    .map(|c| local_p[c][ls[c]][(a >> c) & 1][lt[c]])
                    .product();
            }
            let row = &mut transitions[s][a];
            let err = 1.0 - row.iter().sum::<f64>();
            let k = argmax_lowest(row);
            row[k] += err;
            for c in 0..agents {
                rewards[c][s][a] = local_r[c][ls[c]][(a >> c) & 1];
            }
        }
    }
    FiniteMdp {
        states,
        agents,
        gamma,
        transitions,
        rewards,
        global_reward: None,
    }
}

/// Settings of the decentralized learner run against an MDP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecentralizedRun {
    pub samples: u64,
    pub epsilon: f64,
    pub seed: u64,
}

/// Per-agent tabular Q-learning on a single simulated trajectory: each agent
/// keeps `Q_c(s, a_c)` over the joint state, explores independently, and is
/// updated with its own reward and the max target at rate `1/visits`.
/// Returns the learned tables and their factored greedy joint policy.
pub fn learn_decentralized(
    mdp: &FiniteMdp,
    run: DecentralizedRun,
) -> Result<(Vec<TabularQ>, Vec<usize>)> {
    mdp.validate()?;
    let cfg = LearnConfig {
        gamma: mdp.gamma,
        alpha: LearningRate::InverseVisits,
        epsilon: EpsilonSchedule::constant(run.epsilon),
        target_mode: TargetMode::Qmax,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let mut tables: Vec<TabularQ> = (0..mdp.agents)
        .map(|_| TabularQ::new(Encoding::Raw { width: 1 }, Bins::default()))
        .collect::<Result<_>>()?;
    let state_vecs: Vec<std::sync::Arc<[f64]>> = (0..mdp.states)
        .map(|s| std::sync::Arc::from(vec![s as f64]))
        .collect();

    let mut s = rng.random_range(0..mdp.states);
    for _ in 0..run.samples {
        let joint = crate::marl::select_joint_action(
            mdp.agents,
            |c| tables[c].q_values(&state_vecs[s], 0),
            run.epsilon,
            &mut rng,
        )?;
        let a = joint.index();
        let next = mdp.sample_next(s, a, &mut rng);
        for (c, table) in tables.iter_mut().enumerate() {
            let t = Transition {
                state: state_vecs[s].clone(),
                agent: 0,
                action: joint.0[c],
                reward: mdp.rewards[c][s][a],
                next_state: state_vecs[next].clone(),
                next_action: 0,
            };
            table.batch_update(&[&t], &cfg, 1.0)?;
        }
        s = next;
    }
    let policy = (0..mdp.states)
        .map(|s| {
            let actions = tables
                .iter()
                .map(|t| t.q_values(&[s as f64], 0).map(greedy))
                .collect::<Result<Vec<u8>>>()?;
            Ok(JointAction(actions).index())
        })
        .collect::<Result<Vec<usize>>>()?;
    Ok((tables, policy))
}

/// Relative shortfall of `policy`: `max_s (V*(s) − V_π(s)) / mean_s |V*(s)|`.
pub fn policy_gap(mdp: &FiniteMdp, optimum: &Optimum, policy: &[usize]) -> Result<f64> {
    let v_pi = evaluate_policy(mdp, &deterministic_policy(policy, mdp.joint_actions()))?.v;
    let v_star: Vec<f64> = optimum
        .q
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let scale = v_star.iter().map(|v| v.abs()).sum::<f64>() / v_star.len() as f64;
    let shortfall = v_star
        .iter()
        .zip(&v_pi)
        .map(|(a, b)| a - b)
        .fold(0.0, f64::max);
    Ok(shortfall / scale.max(f64::MIN_POSITIVE))
}
