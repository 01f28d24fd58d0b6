//! Deep Q-learning with replay memory and a single online network.

mod network;
mod replay;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use network::{Gradients, QNetwork, Sample, HIDDEN_DIM};
pub use replay::{ReplayBuffer, Transition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DqnConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: u64,
    pub replay_capacity: usize,
    pub seed: u64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            learning_rate: 1e-3,
            batch_size: 32,
            epsilon_start: 1.0,
            epsilon_end: 0.1,
            epsilon_decay_steps: 2000,
            replay_capacity: ReplayBuffer::DEFAULT_CAPACITY,
            seed: 0,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.replay_capacity == 0 {
            return bad("batch_size and replay_capacity must be positive".into());
        }
        let unit = 0.0..=1.0;
        if !unit.contains(&self.epsilon_start) || !unit.contains(&self.epsilon_end) || self.epsilon_end > self.epsilon_start {
            return bad(format!("need 0 <= epsilon_end <= epsilon_start <= 1, got {} and {}", self.epsilon_end, self.epsilon_start));
        }
        Ok(())
    }

    /// Linear decay from `epsilon_start` to `epsilon_end` over
    /// `epsilon_decay_steps`, constant afterwards.
    pub fn epsilon(&self, step: u64) -> f64 {
        if self.epsilon_decay_steps == 0 || step >= self.epsilon_decay_steps {
            return self.epsilon_end;
        }
        let frac = step as f64 / self.epsilon_decay_steps as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

pub fn q_forward(net: &QNetwork, state: &[f64]) -> Result<Vec<f64>> {
    net.forward(state)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy: uniform with probability `epsilon`, else greedy.
pub fn select_action<R: Rng + ?Sized>(net: &QNetwork, state: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
    let q = net.forward(state)?;
    if rng.random::<f64>() < epsilon {
        return Ok(rng.random_range(0..net.output_dim()));
    }
    Ok(argmax(&q))
}

/// One SGD step on a uniformly sampled minibatch. Targets are `r` for
/// terminal transitions and `r + γ·max_a Q(s', a)` otherwise, computed with
/// the same network before the update. Returns the minibatch loss.
pub fn dqn_train_step<R: Rng + ?Sized>(net: &mut QNetwork, buffer: &ReplayBuffer, cfg: &DqnConfig, rng: &mut R) -> Result<f64> {
    let batch = buffer.sample(rng, cfg.batch_size)?;
    let mut targets = Vec::with_capacity(batch.len());
    for t in &batch {
        let bootstrap = match &t.next_state {
            Some(next) => cfg.gamma * net.forward(next)?.into_iter().fold(f64::NEG_INFINITY, f64::max),
            None => 0.0,
        };
        targets.push(t.reward + bootstrap);
    }
    let samples: Vec<Sample> = batch
        .iter()
        .zip(&targets)
        .map(|(t, &target)| Sample { state: &t.state, action: t.action, target })
        .collect();
    let (loss, grads) = net.loss_and_gradients(&samples)?;
    net.apply_sgd(&grads, cfg.learning_rate);
    Ok(loss)
}

/// A Q-network with its replay memory, exploration schedule and RNG.
#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub net: QNetwork,
    pub buffer: ReplayBuffer,
    pub cfg: DqnConfig,
    rng: ChaCha8Rng,
    /// Exploratory action selections made so far; drives epsilon.
    pub steps: u64,
    pub updates: u64,
}

/// Exact position of a ChaCha8 stream, for checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: hex::encode(rng.get_seed()), word_pos: rng.get_word_pos().to_string() }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = |what: &str| Error::Checkpoint(format!("invalid rng {what}"));
        let seed: [u8; 32] = hex::decode(&self.seed).ok().and_then(|v| v.try_into().ok()).ok_or_else(|| bad("seed"))?;
        let pos: u128 = self.word_pos.parse().map_err(|_| bad("position"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// Serializable snapshot of a [`DqnAgent`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DqnAgentState {
    pub network: String,
    pub buffer: ReplayBuffer,
    pub cfg: DqnConfig,
    pub rng: RngState,
    pub steps: u64,
    pub updates: u64,
}

impl DqnAgent {
    pub fn new(input_dim: usize, actions: usize, cfg: DqnConfig) -> Result<Self> {
        cfg.validate()?;
        let net = QNetwork::new(input_dim, actions, cfg.seed)?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5e_ed0f_d9a1);
        Ok(Self { net, buffer: ReplayBuffer::new(cfg.replay_capacity), cfg, rng, steps: 0, updates: 0 })
    }

    pub fn epsilon(&self) -> f64 {
        self.cfg.epsilon(self.steps)
    }

    /// Epsilon-greedy action for training; advances the schedule.
    pub fn act(&mut self, state: &[f64]) -> Result<usize> {
        let eps = self.epsilon();
        let a = select_action(&self.net, state, eps, &mut self.rng)?;
        self.steps += 1;
        Ok(a)
    }

    pub fn act_with_epsilon(&mut self, state: &[f64], epsilon: f64) -> Result<usize> {
        select_action(&self.net, state, epsilon, &mut self.rng)
    }

    pub fn greedy(&self, state: &[f64]) -> Result<usize> {
        Ok(argmax(&self.net.forward(state)?))
    }

    pub fn q_values(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.net.forward(state)
    }

    pub fn remember(&mut self, t: Transition) -> Result<()> {
        if t.action >= self.net.output_dim() {
            return Err(Error::InvalidConfig(format!("action {} out of range for {} actions", t.action, self.net.output_dim())));
        }
        self.buffer.push(t);
        Ok(())
    }

    /// Runs one update when the buffer holds a full batch.
    pub fn train_step(&mut self) -> Result<Option<f64>> {
        if self.buffer.len() < self.cfg.batch_size {
            return Ok(None);
        }
        let loss = dqn_train_step(&mut self.net, &self.buffer, &self.cfg, &mut self.rng)?;
        self.updates += 1;
        if !self.net.is_finite() {
            return Err(Error::InvalidConfig("Q-network diverged to non-finite weights; lower learning_rate".into()));
        }
        Ok(Some(loss))
    }

    pub fn snapshot(&self) -> DqnAgentState {
        DqnAgentState {
            network: self.net.to_json(),
            buffer: self.buffer.clone(),
            cfg: self.cfg.clone(),
            rng: RngState::capture(&self.rng),
            steps: self.steps,
            updates: self.updates,
        }
    }

    pub fn restore(state: DqnAgentState) -> Result<Self> {
        let rng = state.rng.restore()?;
        Ok(Self {
            net: QNetwork::from_json(&state.network)?,
            buffer: state.buffer,
            cfg: state.cfg,
            rng,
            steps: state.steps,
            updates: state.updates,
        })
    }
}

/// Trains two copies of `net` on `transitions`, the second with every reward
/// multiplied by `c`, then reports whether their greedy actions on `state`
/// agree.
pub fn argmax_invariance_check(
    net: &QNetwork,
    transitions: &[Transition],
    state: &[f64],
    c: f64,
    cfg: &DqnConfig,
    steps: usize,
) -> Result<bool> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidConfig(format!("scale must be positive, got {c}")));
    }
    let train = |scale: f64| -> Result<usize> {
        let mut local = net.clone();
        let mut buffer = ReplayBuffer::new(transitions.len().max(1));
        for t in transitions {
            buffer.push(Transition { reward: t.reward * scale, ..t.clone() });
        }
        let cfg = DqnConfig { batch_size: cfg.batch_size.min(transitions.len()).max(1), ..cfg.clone() };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for _ in 0..steps {
            dqn_train_step(&mut local, &buffer, &cfg, &mut rng)?;
        }
        Ok(argmax(&local.forward(state)?))
    };
    Ok(train(1.0)? == train(c)?)
}
