//! Numerical checks of the decomposition and convergence properties on
//! seeded random MDPs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::marl::{enumerate_joint_argmax, select_joint_action};
use crate::oracle::{
    decomposition_check, deterministic_policy, learn_decentralized, policy_gap, random_additive,
    random_factored, value_iterate, DecentralizedRun,
};

/// Discount of the convergence instances.
pub const CONVERGENCE_GAMMA: f64 = 0.8;
pub const CONVERGENCE_SAMPLES: u64 = 1_000_000;
pub const CONVERGENCE_EPSILON: f64 = 0.2;
/// Local state counts of the two agents (20 joint states).
pub const CONVERGENCE_LOCAL_STATES: [usize; 2] = [5, 4];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    /// Worst observed value.
    pub value: f64,
    pub tolerance: f64,
    /// Whether `value` must stay below (`true`) or above the tolerance.
    pub upper: bool,
    pub passed: bool,
}

impl Check {
    fn below(name: &'static str, value: f64, tolerance: f64) -> Self {
        Check {
            name,
            value,
            tolerance,
            upper: true,
            passed: value <= tolerance,
        }
    }

    fn above(name: &'static str, value: f64, tolerance: f64) -> Self {
        Check {
            name,
            value,
            tolerance,
            upper: false,
            passed: value > tolerance,
        }
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let op = if self.upper { "<=" } else { ">" };
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(
            f,
            "{verdict} {:<28} {:.3e} {op} {:.1e}",
            self.name, self.value, self.tolerance
        )
    }
}

/// Worst decomposition residual over `count` random additive-reward MDPs
/// with up to 50 states and 4 agents, each under a random deterministic
/// joint policy.
pub fn decomposition_residual(seed: u64, count: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for k in 0..count {
        let states = rng.random_range(1..=50);
        let agents = rng.random_range(1..=4);
        let gamma = rng.random_range(0.0..0.99);
        let mdp = random_additive(seed.wrapping_add(k), states, agents, gamma);
        let actions: Vec<usize> = (0..states)
            .map(|_| rng.random_range(0..mdp.joint_actions()))
            .collect();
        worst = worst.max(decomposition_check(
            &mdp,
            &deterministic_policy(&actions, mdp.joint_actions()),
        )?);
    }
    Ok(worst)
}

/// Smallest residual when the global reward is perturbed away from the sum
/// of the agent rewards.
pub fn non_additive_residual(seed: u64) -> Result<f64> {
    let mut mdp = random_additive(seed, 10, 2, 0.9);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let global = (0..mdp.states)
        .map(|s| {
            (0..mdp.joint_actions())
                .map(|a| mdp.global(s, a) + rng.random_range(0.5..1.0))
                .collect()
        })
        .collect();
    mdp.global_reward = Some(global);
    let policy = deterministic_policy(&vec![0; mdp.states], mdp.joint_actions());
    decomposition_check(&mdp, &policy)
}

/// Relative policy gaps of the decentralized learner on `count` seeded
/// two-agent factored MDPs.
pub fn convergence_gaps(seed: u64, count: u64) -> Result<Vec<f64>> {
    (0..count)
        .map(|k| {
            let mdp = random_factored(
                seed.wrapping_add(k),
                &CONVERGENCE_LOCAL_STATES,
                CONVERGENCE_GAMMA,
            );
            let optimum = value_iterate(&mdp)?;
            let run = DecentralizedRun {
                samples: CONVERGENCE_SAMPLES,
                epsilon: CONVERGENCE_EPSILON,
                seed: seed.wrapping_add(1000 + k),
            };
            let (_, policy) = learn_decentralized(&mdp, run)?;
            policy_gap(&mdp, &optimum, &policy)
        })
        .collect()
}

/// Number of random Q tables (per agent count 2..=10) on which the factored
/// greedy joint action differs from exhaustive enumeration.
pub fn argmax_disagreements(seed: u64, tables: usize) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for agents in 2..=10 {
        for _ in 0..tables {
            let q: Vec<[f64; 2]> = (0..agents)
                .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
                .collect();
            let factored = select_joint_action(agents, |c| Ok(q[c]), 0.0, &mut rng)?;
            let (joint, _) = enumerate_joint_argmax(&q);
            if factored != joint {
                bad += 1;
            }
        }
    }
    Ok(bad)
}

/// Runs every check with seeds derived from `seed`.
pub fn run_suite(seed: u64) -> Result<Vec<Check>> {
    let gaps = convergence_gaps(seed, 10)?;
    let worst_gap = gaps.iter().copied().fold(0.0, f64::max);
    Ok(vec![
        Check::below(
            "decomposition_residual",
            decomposition_residual(seed, 100)?,
            1e-9,
        ),
        Check::above("non_additive_residual", non_additive_residual(seed)?, 1e-6),
        Check::below("convergence_policy_gap", worst_gap, 0.01),
        Check::below(
            "argmax_disagreements",
            argmax_disagreements(seed, 1000)? as f64,
            0.0,
        ),
    ])
}
