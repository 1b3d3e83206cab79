//! The decentralized per-signal MDP: state assembly, rewards, factored joint
//! action selection, the normalized temporal-difference target and replay.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Centrality, IntersectionId, RoadNetwork};
use crate::signal::{Phase, SignalState, MIN_GREEN};
use crate::sim::LaneObservation;

/// Signal state as seen by the agents: the phase plus whether the minimum
/// green has elapsed (a switch request would be honoured).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct PhaseCode {
    pub phase: Phase,
    pub ready: bool,
}

impl PhaseCode {
    pub const COUNT: usize = 8;

    pub fn of(sig: &SignalState) -> Self {
        PhaseCode {
            phase: sig.phase,
            ready: !sig.phase.is_yellow() && sig.elapsed >= MIN_GREEN,
        }
    }

    pub fn code(self) -> usize {
        self.phase.index() * 2 + usize::from(self.ready)
    }

    pub fn from_code(code: usize) -> Option<Self> {
        (code < Self::COUNT).then(|| PhaseCode {
            phase: Phase::ALL[code / 2],
            ready: code % 2 == 1,
        })
    }
}

/// The global MDP state: per-lane halting counts and speed lags over the
/// signalized lanes, plus every signal's phase code.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlobalObservation {
    pub step: u64,
    pub halting: Vec<u32>,
    pub speed_lag: Vec<f64>,
    pub phases: Vec<PhaseCode>,
}

impl GlobalObservation {
    pub fn num_lanes(&self) -> usize {
        self.halting.len()
    }

    pub fn num_signals(&self) -> usize {
        self.phases.len()
    }

    /// Flat raw feature vector `[H.., ΔV.., θ codes..]` consumed by the
    /// value approximators.
    pub fn features(&self) -> Vec<f64> {
        let mut f = Vec::with_capacity(2 * self.num_lanes() + self.num_signals());
        f.extend(self.halting.iter().map(|&h| f64::from(h)));
        f.extend_from_slice(&self.speed_lag);
        f.extend(self.phases.iter().map(|p| p.code() as f64));
        f
    }
}

/// Packs lane observations and signal states into canonical (id) order.
pub fn assemble_state(
    step: u64,
    lane_obs: &[LaneObservation],
    signals: &[SignalState],
    net: &RoadNetwork,
) -> Result<GlobalObservation> {
    let m = net.num_signalized_lanes();
    let c = net.num_intersections();
    if lane_obs.len() != m || signals.len() != c {
        return Err(Error::InvalidArgument(format!(
            "expected {m} lane observations and {c} signals, got {} and {}",
            lane_obs.len(),
            signals.len()
        )));
    }
    let mut halting = vec![0u32; m];
    let mut speed_lag = vec![0.0; m];
    let mut seen = vec![false; m];
    for o in lane_obs {
        if o.lane >= m || seen[o.lane] {
            return Err(Error::InvalidArgument(format!(
                "lane {} missing or duplicated",
                o.lane
            )));
        }
        if !o.speed_lag.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "non-finite speed lag on lane {}",
                o.lane
            )));
        }
        seen[o.lane] = true;
        halting[o.lane] = o.halting;
        speed_lag[o.lane] = o.speed_lag;
    }
    let mut phases: Vec<Option<PhaseCode>> = vec![None; c];
    for s in signals {
        if s.intersection >= c || phases[s.intersection].is_some() {
            return Err(Error::InvalidArgument(format!(
                "signal {} missing or duplicated",
                s.intersection
            )));
        }
        phases[s.intersection] = Some(PhaseCode::of(s));
    }
    Ok(GlobalObservation {
        step,
        halting,
        speed_lag,
        phases: phases
            .into_iter()
            .map(|p| p.expect("all signals seen"))
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWeights {
    pub w1: f64,
    pub w2: f64,
    pub w1_central: f64,
    pub w2_central: f64,
    pub w1_edge: f64,
    pub w2_edge: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            w1: 1.0,
            w2: 0.1,
            w1_central: 2.0,
            w2_central: 0.2,
            w1_edge: 1.0,
            w2_edge: 0.1,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("reward.w1", self.w1),
            ("reward.w2", self.w2),
            ("reward.w1_central", self.w1_central),
            ("reward.w2_central", self.w2_central),
            ("reward.w1_edge", self.w1_edge),
            ("reward.w2_edge", self.w2_edge),
        ];
        for (path, v) in all {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(path, format!("must be positive, got {v}")));
            }
        }
        if self.w1_central <= self.w1_edge {
            return Err(Error::config(
                "reward.w1_central",
                "must exceed reward.w1_edge",
            ));
        }
        if self.w2_central <= self.w2_edge {
            return Err(Error::config(
                "reward.w2_central",
                "must exceed reward.w2_edge",
            ));
        }
        Ok(())
    }

    pub fn scaled(&self, k: f64) -> Self {
        RewardWeights {
            w1: self.w1 * k,
            w2: self.w2 * k,
            w1_central: self.w1_central * k,
            w2_central: self.w2_central * k,
            w1_edge: self.w1_edge * k,
            w2_edge: self.w2_edge * k,
        }
    }

    /// Weights applied to intersection `c` under `scheme`.
    pub fn for_signal(
        &self,
        net: &RoadNetwork,
        c: IntersectionId,
        scheme: WeightScheme,
    ) -> (f64, f64) {
        match scheme {
            WeightScheme::Shared => (self.w1, self.w2),
            WeightScheme::Grouped => match net.intersections[c].centrality {
                Centrality::Central => (self.w1_central, self.w2_central),
                Centrality::Edge => (self.w1_edge, self.w2_edge),
            },
        }
    }
}

/// Which weights the per-signal reward uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightScheme {
    /// `w1`, `w2` everywhere.
    Shared,
    /// Central/edge weights by intersection centrality.
    Grouped,
}

/// Correctly rounded sum of `values` (Shewchuk's exact partials).
pub fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    let mut n = partials.len();
    if n == 0 {
        return 0.0;
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        n -= 1;
        let x = hi;
        let y = partials[n];
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != 0.0 {
            break;
        }
    }
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}

fn lane_penalty(obs: &GlobalObservation, lane: usize, w1: f64, w2: f64) -> f64 {
    -w1 * f64::from(obs.halting[lane]) - w2 * obs.speed_lag[lane]
}

/// Global reward `Σ_m (−w1·H_m − w2·ΔV_m)` with the shared weights. Lanes
/// are summed per controlling intersection first, so the result equals the
/// sum of the shared-weight local rewards bit for bit.
pub fn reward_shared(obs: &GlobalObservation, net: &RoadNetwork, w: &RewardWeights) -> Result<f64> {
    if obs.num_lanes() != net.num_signalized_lanes() {
        return Err(Error::InvalidArgument(format!(
            "observation has {} lanes, network {}",
            obs.num_lanes(),
            net.num_signalized_lanes()
        )));
    }
    let parts = (0..net.num_intersections())
        .map(|c| reward_per_signal(obs, net, c, w, WeightScheme::Shared))
        .collect::<Result<Vec<f64>>>()?;
    Ok(exact_sum(parts))
}

/// Local reward of intersection `c` over its incoming lanes.
pub fn reward_per_signal(
    obs: &GlobalObservation,
    net: &RoadNetwork,
    c: IntersectionId,
    w: &RewardWeights,
    scheme: WeightScheme,
) -> Result<f64> {
    let (incoming, _) = net.lanes_of_intersection(c)?;
    let (w1, w2) = w.for_signal(net, c, scheme);
    Ok(exact_sum(
        incoming.iter().map(|&m| lane_penalty(obs, m, w1, w2)),
    ))
}

/// Local rewards of every intersection, in id order.
pub fn rewards_per_signal(
    obs: &GlobalObservation,
    net: &RoadNetwork,
    w: &RewardWeights,
    scheme: WeightScheme,
) -> Vec<f64> {
    (0..net.num_intersections())
        .map(|c| reward_per_signal(obs, net, c, w, scheme).expect("valid intersection id"))
        .collect()
}

/// One binary decision per signal: 0 = hold, 1 = switch.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct JointAction(pub Vec<u8>);

impl JointAction {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Bit `c` of the index is agent `c`'s action.
    pub fn from_index(index: usize, agents: usize) -> Self {
        JointAction((0..agents).map(|c| ((index >> c) & 1) as u8).collect())
    }

    pub fn index(&self) -> usize {
        self.0
            .iter()
            .enumerate()
            .map(|(c, &a)| usize::from(a) << c)
            .sum()
    }
}

/// Greedy local action; ties go to hold.
pub fn greedy(q: [f64; 2]) -> u8 {
    u8::from(q[1] > q[0])
}

/// Factored joint action: each agent maximizes its own `Q_c(s, ·)`, then
/// independently explores with probability `epsilon`. `q` is evaluated once
/// per agent.
pub fn select_joint_action<R, F>(
    agents: usize,
    mut q: F,
    epsilon: f64,
    rng: &mut R,
) -> Result<JointAction>
where
    R: Rng + ?Sized,
    F: FnMut(usize) -> Result<[f64; 2]>,
{
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!(
            "epsilon {epsilon} outside [0, 1]"
        )));
    }
    let mut actions = Vec::with_capacity(agents);
    for c in 0..agents {
        let explore = epsilon > 0.0 && rng.random::<f64>() < epsilon;
        let a = if explore {
            rng.random_range(0..2u8)
        } else {
            greedy(q(c)?)
        };
        actions.push(a);
    }
    Ok(JointAction(actions))
}

/// Brute-force maximizer of `Σ_c Q_c(s, a_c)` over all `2^C` joint actions,
/// ties to the lowest index. Returns the action and the number of per-agent
/// value lookups performed.
pub fn enumerate_joint_argmax(q: &[[f64; 2]]) -> (JointAction, u64) {
    let agents = q.len();
    let mut best = (f64::NEG_INFINITY, 0usize);
    let mut lookups = 0u64;
    for idx in 0..(1usize << agents) {
        let mut total = 0.0;
        for (c, qc) in q.iter().enumerate() {
            total += qc[(idx >> c) & 1];
            lookups += 1;
        }
        if total > best.0 {
            best = (total, idx);
        }
    }
    (JointAction::from_index(best.1, agents), lookups)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetMode {
    Sarsa,
    Qmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum LearningRate {
    Constant {
        value: f64,
    },
    /// `1 / n` on the `n`-th visit of a (state, action) pair.
    InverseVisits,
}

impl LearningRate {
    pub fn rate(&self, visits: u64) -> f64 {
        match *self {
            LearningRate::Constant { value } => value,
            LearningRate::InverseVisits => 1.0 / visits.max(1) as f64,
        }
    }
}

/// Linear decay from `start` to `end` over `decay_steps`, then constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl EpsilonSchedule {
    pub fn constant(value: f64) -> Self {
        EpsilonSchedule {
            start: value,
            end: value,
            decay_steps: 0,
        }
    }

    pub fn value(&self, step: u64) -> f64 {
        if step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnConfig {
    pub gamma: f64,
    pub alpha: LearningRate,
    pub epsilon: EpsilonSchedule,
    pub target_mode: TargetMode,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            gamma: 0.99,
            alpha: LearningRate::Constant { value: 0.1 },
            epsilon: EpsilonSchedule {
                start: 1.0,
                end: 0.02,
                decay_steps: 300_000,
            },
            target_mode: TargetMode::Qmax,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config(
                "learn.gamma",
                format!("must lie in [0, 1), got {}", self.gamma),
            ));
        }
        if let LearningRate::Constant { value } = self.alpha {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::config(
                    "learn.alpha.value",
                    format!("must lie in [0, 1], got {value}"),
                ));
            }
        }
        let e = self.epsilon;
        if !(0.0..=1.0).contains(&e.start) || !(0.0..=1.0).contains(&e.end) {
            return Err(Error::config(
                "learn.epsilon",
                "start and end must lie in [0, 1]",
            ));
        }
        Ok(())
    }
}

/// Normalized one-step target `(1−γ)·R + γ·Q(s′, a′)` (or the max over `a′`).
pub fn td_target(
    reward: f64,
    next_q: [f64; 2],
    next_action: u8,
    gamma: f64,
    mode: TargetMode,
) -> f64 {
    let bootstrap = match mode {
        TargetMode::Sarsa => next_q[usize::from(next_action)],
        TargetMode::Qmax => next_q[0].max(next_q[1]),
    };
    (1.0 - gamma) * reward + gamma * bootstrap
}

/// `(1−α)·Q + α·T`.
pub fn blend(q: f64, target: f64, alpha: f64) -> f64 {
    (1.0 - alpha) * q + alpha * target
}

/// One agent's experience. States are the raw global feature vectors and are
/// shared between all agents of a step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Arc<[f64]>,
    pub agent: usize,
    pub action: u8,
    pub reward: f64,
    pub next_state: Arc<[f64]>,
    pub next_action: u8,
}

impl Transition {
    pub fn is_finite(&self) -> bool {
        self.reward.is_finite()
            && self.state.iter().all(|x| x.is_finite())
            && self.next_state.iter().all(|x| x.is_finite())
    }
}

/// Fixed-capacity ring buffer with uniform sampling with replacement.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument(
                "replay capacity must be positive".into(),
            ));
        }
        Ok(ReplayBuffer {
            items: VecDeque::with_capacity(capacity.min(1 << 20)),
            capacity,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn store(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        if self.items.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        Ok((0..batch)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }
}
