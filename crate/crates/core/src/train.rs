//! Rollouts, training iterations, policy groups, evaluation replays and the
//! learning-rate hook between edge servers.

use std::fmt;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::approx::{
    checkpoint, ApproxSpec, Approximator, Encoding, FeatureLayout, ObservationScope,
};
use crate::env::Env;
use crate::error::{Error, Result};
use crate::marl::{
    select_joint_action, JointAction, LearnConfig, ReplayBuffer, RewardWeights, Transition,
    WeightScheme,
};
use crate::network::{Centrality, RoadNetwork};
use crate::signal::{ActuatedConfig, StaticSchedule};
use crate::sim::{MetricsRecord, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyMode {
    /// Every signal shares one approximator.
    Shared,
    /// Central and edge signals each share their own approximator.
    Multi,
}

impl PolicyMode {
    pub fn weight_scheme(self) -> WeightScheme {
        match self {
            PolicyMode::Shared => WeightScheme::Shared,
            PolicyMode::Multi => WeightScheme::Grouped,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyGroup {
    Shared,
    Central,
    Edge,
}

impl fmt::Display for PolicyGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyGroup::Shared => "shared",
            PolicyGroup::Central => "central",
            PolicyGroup::Edge => "edge",
        })
    }
}

/// Policy group of every intersection, in id order.
pub fn assign_policies(net: &RoadNetwork, mode: PolicyMode) -> Vec<PolicyGroup> {
    net.intersections
        .iter()
        .map(|i| match (mode, i.centrality) {
            (PolicyMode::Shared, _) => PolicyGroup::Shared,
            (PolicyMode::Multi, Centrality::Central) => PolicyGroup::Central,
            (PolicyMode::Multi, Centrality::Edge) => PolicyGroup::Edge,
        })
        .collect()
}

/// The approximators of all policy groups and the agent → group mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySet {
    pub mode: PolicyMode,
    pub groups: Vec<(PolicyGroup, Approximator)>,
    /// Index into `groups` for every agent.
    pub assignment: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct BundleIndex {
    mode: PolicyMode,
    groups: Vec<PolicyGroup>,
    assignment: Vec<usize>,
}

impl PolicySet {
    pub fn new(
        net: &RoadNetwork,
        sim: &SimConfig,
        mode: PolicyMode,
        scope: ObservationScope,
        spec: &ApproxSpec,
    ) -> Result<Self> {
        let per_agent = assign_policies(net, mode);
        let mut groups: Vec<(PolicyGroup, Approximator)> = Vec::new();
        let mut assignment = Vec::with_capacity(per_agent.len());
        let encoding = Encoding::Traffic(FeatureLayout::for_network(net, sim, scope));
        for g in per_agent {
            let idx = match groups.iter().position(|(h, _)| *h == g) {
                Some(i) => i,
                None => {
                    groups.push((g, spec.build(encoding.clone())?));
                    groups.len() - 1
                }
            };
            assignment.push(idx);
        }
        Ok(PolicySet {
            mode,
            groups,
            assignment,
        })
    }

    pub fn agents(&self) -> usize {
        self.assignment.len()
    }

    pub fn group_of(&self, agent: usize) -> PolicyGroup {
        self.groups[self.assignment[agent]].0
    }

    pub fn group_size(&self, group: usize) -> usize {
        self.assignment.iter().filter(|&&g| g == group).count()
    }

    pub fn q_values(&self, state: &[f64], agent: usize) -> Result<[f64; 2]> {
        self.groups[self.assignment[agent]].1.q_values(state, agent)
    }

    /// Writes `policies.json` and one `<group>.qck` per group into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let index = BundleIndex {
            mode: self.mode,
            groups: self.groups.iter().map(|(g, _)| *g).collect(),
            assignment: self.assignment.clone(),
        };
        std::fs::write(
            dir.join("policies.json"),
            serde_json::to_string_pretty(&index)?,
        )?;
        for (g, approx) in &self.groups {
            checkpoint::save_checkpoint(approx, &dir.join(format!("{g}.qck")))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join("policies.json")).map_err(|e| {
            Error::Checkpoint(format!("{}: {e}", dir.join("policies.json").display()))
        })?;
        let index: BundleIndex = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("bad policy index: {e}")))?;
        let groups = index
            .groups
            .iter()
            .map(|g| {
                Ok((
                    *g,
                    checkpoint::load_checkpoint(&dir.join(format!("{g}.qck")), None)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        if index.assignment.iter().any(|&i| i >= groups.len()) {
            return Err(Error::Checkpoint(
                "assignment refers to a missing group".into(),
            ));
        }
        Ok(PolicySet {
            mode: index.mode,
            groups,
            assignment: index.assignment,
        })
    }

    /// Re-targets local-scope policies to another grid. Local observations
    /// have the same shape on every grid, so the learned values carry over.
    pub fn transfer(&self, net: &RoadNetwork, sim: &SimConfig) -> Result<Self> {
        let layout = FeatureLayout::for_network(net, sim, ObservationScope::Local);
        let groups = self
            .groups
            .iter()
            .map(|(g, a)| {
                let mut a = a.clone();
                let enc = match &mut a {
                    Approximator::Tabular(t) => &mut t.encoding,
                    Approximator::Neural(n) => &mut n.encoding,
                };
                match enc {
                    Encoding::Traffic(l) if l.scope == ObservationScope::Local => {
                        *enc = Encoding::Traffic(layout.clone())
                    }
                    _ => {
                        return Err(Error::InvalidArgument(
                            "only local-scope traffic policies transfer".into(),
                        ))
                    }
                }
                Ok((*g, a))
            })
            .collect::<Result<Vec<_>>>()?;
        let per_agent = assign_policies(net, self.mode);
        let assignment = per_agent
            .iter()
            .map(|g| {
                groups
                    .iter()
                    .position(|(h, _)| h == g)
                    .ok_or_else(|| Error::InvalidArgument(format!("no {g} policy to transfer")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PolicySet {
            mode: self.mode,
            groups,
            assignment,
        })
    }

    /// Checks that the policies fit an environment with `agents` signals
    /// and raw state width `width`.
    pub fn check_compatible(&self, agents: usize, width: usize) -> Result<()> {
        if self.agents() != agents {
            return Err(Error::Checkpoint(format!(
                "policy has {} agents, scenario {agents}",
                self.agents()
            )));
        }
        for (g, a) in &self.groups {
            let enc = match a {
                Approximator::Tabular(t) => &t.encoding,
                Approximator::Neural(n) => &n.encoding,
            };
            if let Encoding::Traffic(l) = enc {
                if l.raw_len() != width || l.n_signals != agents {
                    return Err(Error::Checkpoint(format!(
                        "{g} policy was trained on a different grid"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub rollout_length: u64,
    pub rollouts_per_iteration: u64,
    pub iterations: u64,
    pub policy_mode: PolicyMode,
    pub scope: ObservationScope,
    pub approximator: ApproxSpec,
    /// Iterations between checkpoints.
    pub eval_every: u64,
    /// Transitions a replay buffer must hold before the first batch.
    pub warmup_steps: u64,
    /// Environment steps between batch updates (replay-driven learners).
    pub sync_every: u64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub eval_episodes: u64,
    pub eval_steps: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rollout_length: 1000,
            rollouts_per_iteration: 30,
            iterations: 100,
            policy_mode: PolicyMode::Shared,
            scope: ObservationScope::Global,
            approximator: ApproxSpec::default(),
            eval_every: 10,
            warmup_steps: 10_000,
            sync_every: 4,
            batch_size: 1000,
            replay_capacity: 100_000,
            eval_episodes: 5,
            eval_steps: 3600,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("train.rollout_length", self.rollout_length),
            ("train.rollouts_per_iteration", self.rollouts_per_iteration),
            ("train.iterations", self.iterations),
            ("train.eval_every", self.eval_every),
            ("train.sync_every", self.sync_every),
            ("train.batch_size", self.batch_size as u64),
            ("train.replay_capacity", self.replay_capacity as u64),
            ("train.eval_episodes", self.eval_episodes),
            ("train.eval_steps", self.eval_steps),
        ];
        for (path, v) in positive {
            if v == 0 {
                return Err(Error::config(path, "must be positive"));
            }
        }
        if let ApproxSpec::Neural { network } = &self.approximator {
            network.validate()?;
        }
        Ok(())
    }

    pub fn total_steps(&self) -> u64 {
        self.iterations * self.rollouts_per_iteration * self.rollout_length
    }
}

/// Everything needed to build environments and learners.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub net: Arc<RoadNetwork>,
    pub sim: SimConfig,
    pub weights: RewardWeights,
    pub learn: LearnConfig,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Experiment {
    pub fn env(&self) -> Result<Env> {
        Env::new(
            self.net.clone(),
            self.sim.clone(),
            self.weights,
            self.train.policy_mode.weight_scheme(),
        )
    }

    pub fn policies(&self) -> Result<PolicySet> {
        PolicySet::new(
            &self.net,
            &self.sim,
            self.train.policy_mode,
            self.train.scope,
            &self.train.approximator,
        )
    }
}

/// Seed of the `index`-th episode in stream `stream` of a run.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TRAIN_STREAM: u64 = 1;
const EXPLORE_STREAM: u64 = 2;
const EVAL_STREAM: u64 = 3;

#[derive(Debug, Clone)]
pub struct Rollout {
    pub transitions: Vec<Transition>,
    /// Mean per-step global reward.
    pub reward: f64,
    /// Mean per-step reward of every agent.
    pub agent_rewards: Vec<f64>,
    pub metrics: Vec<MetricsRecord>,
}

/// Runs one episode from an empty network with ε-greedy factored action
/// selection. `first_step` is the global step index used for the ε
/// schedule.
pub fn run_rollout(
    env: &mut Env,
    env_seed: u64,
    policies: &PolicySet,
    learn: &LearnConfig,
    length: u64,
    first_step: u64,
    rng: &mut ChaCha8Rng,
) -> Result<Rollout> {
    let agents = env.agents();
    env.reset(env_seed);
    let mut state: Arc<[f64]> = Arc::from(env.observation().features());
    let mut action = select_joint_action(
        agents,
        |c| policies.q_values(&state, c),
        learn.epsilon.value(first_step),
        rng,
    )?;
    let mut transitions = Vec::with_capacity((length as usize) * agents);
    let mut reward_sum = 0.0;
    let mut agent_sums = vec![0.0; agents];
    let mut metrics = Vec::with_capacity(length as usize);
    for k in 0..length {
        let out = env.step(&action)?;
        let next_state: Arc<[f64]> = Arc::from(env.observation().features());
        let eps = learn.epsilon.value(first_step + k + 1);
        let next_action =
            select_joint_action(agents, |c| policies.q_values(&next_state, c), eps, rng)?;
        for c in 0..agents {
            transitions.push(Transition {
                state: state.clone(),
                agent: c,
                action: action.0[c],
                reward: out.rewards[c],
                next_state: next_state.clone(),
                next_action: next_action.0[c],
            });
            agent_sums[c] += out.rewards[c];
        }
        reward_sum += out.reward;
        metrics.push(out.metrics);
        state = next_state;
        action = next_action;
    }
    let n = length as f64;
    Ok(Rollout {
        transitions,
        reward: reward_sum / n,
        agent_rewards: agent_sums.into_iter().map(|r| r / n).collect(),
        metrics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationReport {
    pub iteration: u64,
    pub steps: u64,
    pub reward_max: f64,
    pub reward_mean: f64,
    pub reward_min: f64,
    /// Mean per-agent reward of every policy group.
    pub group_means: Vec<(PolicyGroup, f64)>,
    pub seconds: f64,
}

impl IterationReport {
    pub fn csv_header(groups: &[PolicyGroup]) -> Vec<String> {
        let mut h: Vec<String> = [
            "iteration",
            "steps",
            "reward_max",
            "reward_mean",
            "reward_min",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        h.extend(groups.iter().map(|g| format!("reward_{g}")));
        h.push("seconds".into());
        h
    }

    pub fn csv_row(&self) -> Vec<String> {
        let mut r = vec![
            self.iteration.to_string(),
            self.steps.to_string(),
            format!("{:.6}", self.reward_max),
            format!("{:.6}", self.reward_mean),
            format!("{:.6}", self.reward_min),
        ];
        r.extend(self.group_means.iter().map(|(_, m)| format!("{m:.6}")));
        r.push(format!("{:.3}", self.seconds));
        r
    }
}

/// Learning-rate adjustments between iterations, one multiplier per group.
pub trait InterEsHook {
    fn adjust(&mut self, reports: &[IterationReport], multipliers: &[f64]) -> Vec<f64>;
}

/// Leaves learning rates untouched.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityHook;

impl InterEsHook for IdentityHook {
    fn adjust(&mut self, _reports: &[IterationReport], multipliers: &[f64]) -> Vec<f64> {
        multipliers.to_vec()
    }
}

/// Demonstration rule: halves a group's rate when its mean reward moved by
/// less than `tolerance` over each of the last `window` iterations.
#[derive(Debug, Clone, Copy)]
pub struct PlateauHook {
    pub tolerance: f64,
    pub window: usize,
    pub factor: f64,
}

impl Default for PlateauHook {
    fn default() -> Self {
        PlateauHook {
            tolerance: 1e-3,
            window: 5,
            factor: 0.5,
        }
    }
}

impl InterEsHook for PlateauHook {
    fn adjust(&mut self, reports: &[IterationReport], multipliers: &[f64]) -> Vec<f64> {
        if reports.len() <= self.window {
            return multipliers.to_vec();
        }
        let recent = &reports[reports.len() - self.window - 1..];
        multipliers
            .iter()
            .enumerate()
            .map(|(g, &m)| {
                let flat = recent.windows(2).all(|w| {
                    (w[1].group_means[g].1 - w[0].group_means[g].1).abs() < self.tolerance
                });
                if flat {
                    m * self.factor
                } else {
                    m
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub reports: Vec<IterationReport>,
    pub policies: PolicySet,
}

/// Synchronous training: every rollout is collected with frozen policies,
/// then the groups are updated. Tabular groups apply every transition of
/// the rollout in order; replay-driven groups take one batch per
/// `sync_every` collected steps once warm. Checkpoints are written to
/// `checkpoint_dir` every `eval_every` iterations and at the end.
pub fn train(
    exp: &Experiment,
    hook: &mut dyn InterEsHook,
    checkpoint_dir: Option<&Path>,
    mut progress: impl FnMut(&IterationReport),
) -> Result<TrainOutcome> {
    exp.learn.validate()?;
    exp.train.validate()?;
    let tc = &exp.train;
    let mut env = exp.env()?;
    let mut policies = exp.policies()?;
    let replay_driven: Vec<bool> = policies
        .groups
        .iter()
        .map(|(_, a)| matches!(a, Approximator::Neural(_)))
        .collect();
    let mut buffers = policies
        .groups
        .iter()
        .map(|_| ReplayBuffer::new(tc.replay_capacity))
        .collect::<Result<Vec<_>>>()?;
    let mut multipliers = vec![1.0; policies.groups.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(exp.seed, EXPLORE_STREAM, 0));
    let mut reports = Vec::with_capacity(tc.iterations as usize);
    let mut steps = 0u64;
    let started = Instant::now();

    for iteration in 0..tc.iterations {
        let mut rollout_rewards = Vec::with_capacity(tc.rollouts_per_iteration as usize);
        let mut group_sums = vec![0.0; policies.groups.len()];
        for r in 0..tc.rollouts_per_iteration {
            let episode = iteration * tc.rollouts_per_iteration + r;
            let seed = derive_seed(exp.seed, TRAIN_STREAM, episode);
            let rollout = run_rollout(
                &mut env,
                seed,
                &policies,
                &exp.learn,
                tc.rollout_length,
                steps,
                &mut rng,
            )?;
            steps += tc.rollout_length;
            rollout_rewards.push(rollout.reward);
            for (c, &rew) in rollout.agent_rewards.iter().enumerate() {
                group_sums[policies.assignment[c]] += rew;
            }

            let mut per_group: Vec<Vec<&Transition>> = vec![Vec::new(); policies.groups.len()];
            for t in &rollout.transitions {
                per_group[policies.assignment[t.agent]].push(t);
            }
            for (g, batch) in per_group.into_iter().enumerate() {
                let approx = &mut policies.groups[g].1;
                if replay_driven[g] {
                    for t in batch {
                        buffers[g].store(t.clone());
                    }
                    if buffers[g].len() as u64 >= tc.warmup_steps {
                        for _ in 0..(tc.rollout_length / tc.sync_every).max(1) {
                            let sample = buffers[g].sample(tc.batch_size, &mut rng)?;
                            approx.batch_update(&sample, &exp.learn, multipliers[g])?;
                        }
                    }
                } else if !batch.is_empty() {
                    approx.batch_update(&batch, &exp.learn, multipliers[g])?;
                }
            }
        }

        let n = rollout_rewards.len() as f64;
        let report = IterationReport {
            iteration,
            steps,
            reward_max: rollout_rewards
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max),
            reward_mean: rollout_rewards.iter().sum::<f64>() / n,
            reward_min: rollout_rewards
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min),
            group_means: policies
                .groups
                .iter()
                .enumerate()
                .map(|(g, (name, _))| (*name, group_sums[g] / (n * policies.group_size(g) as f64)))
                .collect(),
            seconds: started.elapsed().as_secs_f64(),
        };
        progress(&report);
        reports.push(report);
        multipliers = hook.adjust(&reports, &multipliers);
        if multipliers.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
            return Err(Error::NumericFault(format!(
                "learning-rate multipliers {multipliers:?}"
            )));
        }
        if let Some(dir) = checkpoint_dir {
            if (iteration + 1) % tc.eval_every == 0 || iteration + 1 == tc.iterations {
                policies.save(dir)?;
            }
        }
    }
    Ok(TrainOutcome { reports, policies })
}

/// Who drives the signals.
#[derive(Debug, Clone)]
pub enum Controller {
    Static(StaticSchedule),
    Actuated(ActuatedConfig),
    /// Greedy factored selection from learned values.
    Learned(Box<PolicySet>),
}

impl Controller {
    pub fn name(&self) -> &'static str {
        match self {
            Controller::Static(_) => "static",
            Controller::Actuated(_) => "actuated",
            Controller::Learned(_) => "learned",
        }
    }

    pub fn actions(&self, env: &Env) -> Result<JointAction> {
        Ok(match self {
            Controller::Static(s) => env.static_actions(s),
            Controller::Actuated(cfg) => env.actuated_actions(cfg),
            Controller::Learned(p) => {
                let state = env.observation().features();
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                select_joint_action(env.agents(), |c| p.q_values(&state, c), 0.0, &mut rng)?
            }
        })
    }
}

/// Per-step means of one evaluation episode, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpisodeSummary {
    pub halting: f64,
    pub queue_time: f64,
    pub queue_length: f64,
    pub speed: f64,
    pub reward: f64,
    pub vehicles: f64,
}

impl EpisodeSummary {
    pub const FIELDS: [&'static str; 6] = [
        "halting",
        "queue_time",
        "queue_length",
        "speed",
        "reward",
        "vehicles",
    ];

    fn values(&self) -> [f64; 6] {
        [
            self.halting,
            self.queue_time,
            self.queue_length,
            self.speed,
            self.reward,
            self.vehicles,
        ]
    }

    fn from_values(v: [f64; 6]) -> Self {
        EpisodeSummary {
            halting: v[0],
            queue_time: v[1],
            queue_length: v[2],
            speed: v[3],
            reward: v[4],
            vehicles: v[5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub controller: String,
    pub episodes: Vec<EpisodeSummary>,
    pub mean: EpisodeSummary,
    pub std: EpisodeSummary,
    /// Median absolute deviation of the episode means.
    pub mad: EpisodeSummary,
}

impl EvalReport {
    fn from_episodes(controller: &str, episodes: Vec<EpisodeSummary>) -> Self {
        let n = episodes.len() as f64;
        let mut mean = [0.0; 6];
        let mut std = [0.0; 6];
        let mut mad = [0.0; 6];
        for k in 0..6 {
            let mut xs: Vec<f64> = episodes.iter().map(|e| e.values()[k]).collect();
            mean[k] = xs.iter().sum::<f64>() / n;
            std[k] = (xs.iter().map(|x| (x - mean[k]).powi(2)).sum::<f64>() / n).sqrt();
            xs.sort_by(f64::total_cmp);
            let med = median(&xs);
            let mut dev: Vec<f64> = xs.iter().map(|x| (x - med).abs()).collect();
            dev.sort_by(f64::total_cmp);
            mad[k] = median(&dev);
        }
        EvalReport {
            controller: controller.to_string(),
            episodes,
            mean: EpisodeSummary::from_values(mean),
            std: EpisodeSummary::from_values(std),
            mad: EpisodeSummary::from_values(mad),
        }
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Replays `controller` on `episodes` fresh episodes of `steps` steps.
/// `on_step` sees every metrics record.
pub fn evaluate(
    exp: &Experiment,
    controller: &Controller,
    episodes: u64,
    steps: u64,
    mut on_step: impl FnMut(u64, &MetricsRecord),
) -> Result<EvalReport> {
    if episodes == 0 || steps == 0 {
        return Err(Error::InvalidArgument(
            "need at least one episode and one step".into(),
        ));
    }
    let mut env = exp.env()?;
    if let Controller::Learned(p) = controller {
        p.check_compatible(env.agents(), env.observation().features().len())?;
    }
    let mut summaries = Vec::with_capacity(episodes as usize);
    for e in 0..episodes {
        env.reset(derive_seed(exp.seed, EVAL_STREAM, e));
        let mut acc = [0.0; 6];
        for _ in 0..steps {
            let action = controller.actions(&env)?;
            let out = env.step(&action)?;
            let m = &out.metrics;
            acc[0] += f64::from(m.halting);
            acc[1] += m.queue_time;
            acc[2] += m.queue_length;
            acc[3] += m.speed.unwrap_or(0.0);
            acc[4] += out.reward;
            acc[5] += m.vehicles as f64;
            on_step(e, m);
        }
        summaries.push(EpisodeSummary::from_values(acc.map(|x| x / steps as f64)));
    }
    Ok(EvalReport::from_episodes(controller.name(), summaries))
}
