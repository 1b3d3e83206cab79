//! Fully connected rectifier network with Adam and a periodically refreshed
//! target copy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::approx::features::Encoding;
use crate::error::{Error, Result};
use crate::marl::{td_target, LearnConfig, Transition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeuralConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub adam_eps: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Gradient updates between target refreshes.
    pub target_period: u64,
    pub init_seed: u64,
}

impl Default for NeuralConfig {
    fn default() -> Self {
        NeuralConfig {
            hidden: vec![256, 256],
            learning_rate: 6.25e-5,
            adam_eps: 1.5e-4,
            beta1: 0.9,
            beta2: 0.999,
            target_period: 8000,
            init_seed: 0,
        }
    }
}

impl NeuralConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(Error::config(
                "neural.hidden",
                "layer sizes must be positive",
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.adam_eps > 0.0) {
            return Err(Error::config(
                "neural.learning_rate",
                "step size and epsilon must be positive",
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config(
                "neural.beta1",
                "moment decay rates must lie in [0, 1)",
            ));
        }
        if self.target_period == 0 {
            return Err(Error::config("neural.target_period", "must be positive"));
        }
        Ok(())
    }
}

/// Multilayer perceptron with parameters in one flat vector. Layer `l` stores
/// its weight matrix row-major (`out × in`) followed by its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

impl Mlp {
    pub fn param_count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    pub fn zeros(sizes: Vec<usize>) -> Self {
        let n = Self::param_count(&sizes);
        Mlp {
            sizes,
            params: vec![0.0; n],
        }
    }

    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn init(sizes: Vec<usize>, seed: u64) -> Self {
        let mut mlp = Self::zeros(sizes);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut off = 0;
        for w in mlp.sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut mlp.params[off..off + fan_in * fan_out] {
                *p = rng.random_range(-bound..bound);
            }
            off += fan_in * fan_out + fan_out;
        }
        mlp
    }

    pub fn forward(&self, params: &[f64], input: &[f64]) -> Vec<f64> {
        let mut act = input.to_vec();
        let mut off = 0;
        let layers = self.sizes.len() - 1;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let next = affine(params, off, w[0], w[1], &act);
            off += w[0] * w[1] + w[1];
            act = if l + 1 < layers {
                next.into_iter().map(relu).collect()
            } else {
                next
            };
        }
        act
    }

    /// Adds `scale · ∂out[action]/∂θ` at `input` into `grad`. Returns the
    /// network output.
    fn accumulate_grad(
        &self,
        params: &[f64],
        input: &[f64],
        action: usize,
        scale: f64,
        grad: &mut [f64],
    ) -> Vec<f64> {
        let layers = self.sizes.len() - 1;
        let mut acts: Vec<Vec<f64>> = vec![input.to_vec()];
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for (l, w) in self.sizes.windows(2).enumerate() {
            offsets.push(off);
            let z = affine(params, off, w[0], w[1], acts.last().expect("input layer"));
            off += w[0] * w[1] + w[1];
            acts.push(if l + 1 < layers {
                z.into_iter().map(relu).collect()
            } else {
                z
            });
        }
        let output = acts[layers].clone();

        let mut delta = vec![0.0; self.sizes[layers]];
        delta[action] = scale;
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let prev = &acts[l];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = off + o * n_in;
                for (g, &x) in grad[row..row + n_in].iter_mut().zip(prev) {
                    *g += d * x;
                }
                grad[off + n_out * n_in + o] += d;
            }
            if l > 0 {
                let mut back = vec![0.0; n_in];
                for o in 0..n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    let row = off + o * n_in;
                    for (b, &w) in back.iter_mut().zip(&params[row..row + n_in]) {
                        *b += d * w;
                    }
                }
                // Rectifier derivative from the post-activation value.
                for (b, &a) in back.iter_mut().zip(prev) {
                    if a <= 0.0 {
                        *b = 0.0;
                    }
                }
                delta = back;
            }
        }
        output
    }

    /// Mean squared error `1/B Σ (Q(x_i, a_i) − T_i)²` and its gradient.
    pub fn loss_and_grad(
        &self,
        params: &[f64],
        inputs: &[Vec<f64>],
        actions: &[usize],
        targets: &[f64],
    ) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; params.len()];
        let b = inputs.len() as f64;
        let mut loss = 0.0;
        for ((x, &a), &t) in inputs.iter().zip(actions).zip(targets) {
            let q = self.forward(params, x)[a];
            let err = q - t;
            loss += err * err;
            self.accumulate_grad(params, x, a, 2.0 * err / b, &mut grad);
        }
        (loss / b, grad)
    }
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

fn affine(params: &[f64], off: usize, n_in: usize, n_out: usize, x: &[f64]) -> Vec<f64> {
    let bias = off + n_in * n_out;
    (0..n_out)
        .map(|o| {
            let row = &params[off + o * n_in..off + (o + 1) * n_in];
            row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + params[bias + o]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &NeuralConfig, lr_scale: f64) {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let lr = cfg.learning_rate * lr_scale;
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + cfg.adam_eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralQ {
    pub encoding: Encoding,
    pub config: NeuralConfig,
    pub net: Mlp,
    pub target: Vec<f64>,
    pub adam: Adam,
    pub updates: u64,
}

impl NeuralQ {
    pub fn new(encoding: Encoding, config: NeuralConfig) -> Result<Self> {
        config.validate()?;
        let mut sizes = vec![encoding.input_len()];
        sizes.extend_from_slice(&config.hidden);
        sizes.push(2);
        let net = Mlp::init(sizes, config.init_seed);
        Ok(Self::from_parts(encoding, config, net))
    }

    pub fn from_parts(encoding: Encoding, config: NeuralConfig, net: Mlp) -> Self {
        let n = net.params.len();
        NeuralQ {
            encoding,
            config,
            target: net.params.clone(),
            net,
            adam: Adam::new(n),
            updates: 0,
        }
    }

    fn input(&self, state: &[f64], agent: usize) -> Result<Vec<f64>> {
        let mut x = Vec::with_capacity(self.encoding.input_len());
        self.encoding.encode(state, agent, &mut x)?;
        Ok(x)
    }

    fn eval(&self, params: &[f64], state: &[f64], agent: usize) -> Result<[f64; 2]> {
        let out = self.net.forward(params, &self.input(state, agent)?);
        if !out.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericFault(format!("network output {out:?}")));
        }
        Ok([out[0], out[1]])
    }

    /// Values from the live parameters.
    pub fn q_values(&self, state: &[f64], agent: usize) -> Result<[f64; 2]> {
        self.eval(&self.net.params, state, agent)
    }

    /// Values from the target copy.
    pub fn target_values(&self, state: &[f64], agent: usize) -> Result<[f64; 2]> {
        self.eval(&self.target, state, agent)
    }

    /// One Adam step on the batch. Targets come from the target copy, which
    /// is refreshed every `target_period` updates. Returns the pre-step loss.
    pub fn batch_update(
        &mut self,
        batch: &[&Transition],
        cfg: &LearnConfig,
        lr_scale: f64,
    ) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let mut inputs = Vec::with_capacity(batch.len());
        let mut actions = Vec::with_capacity(batch.len());
        let mut targets = Vec::with_capacity(batch.len());
        for t in batch {
            if !t.is_finite() {
                return Err(Error::NumericFault(format!(
                    "non-finite transition for agent {}",
                    t.agent
                )));
            }
            let next = self.target_values(&t.next_state, t.agent)?;
            targets.push(td_target(
                t.reward,
                next,
                t.next_action,
                cfg.gamma,
                cfg.target_mode,
            ));
            inputs.push(self.input(&t.state, t.agent)?);
            actions.push(usize::from(t.action));
        }
        let (loss, grad) = self
            .net
            .loss_and_grad(&self.net.params, &inputs, &actions, &targets);
        if !loss.is_finite() || !grad.iter().all(|g| g.is_finite()) {
            let bad = grad.iter().filter(|g| !g.is_finite()).count();
            return Err(Error::NumericFault(format!(
                "loss {loss}, {bad} non-finite gradient entries at update {}",
                self.updates
            )));
        }
        self.adam
            .step(&mut self.net.params, &grad, &self.config, lr_scale);
        self.updates += 1;
        if self.updates.is_multiple_of(self.config.target_period) {
            self.target.copy_from_slice(&self.net.params);
        }
        Ok(loss)
    }
}
