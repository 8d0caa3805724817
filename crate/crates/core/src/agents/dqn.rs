//! Deep Q-learning over the discrete angle-bin action space.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::qnet::{Adam, QNetError, QNetwork};
use crate::environment::{render_state, EnvError, Environment, StateTensor};

#[derive(Debug, Error)]
pub enum DqnError {
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Net(#[from] QNetError),
}

pub type Result<T, E = DqnError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnHyperparams {
    pub episodes: usize,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_episodes: f64,
    pub learning_rate: f64,
    pub target_sync_interval: usize,
    pub seed: u64,
    /// Render resolution fed to the network.
    pub render_dims: [usize; 3],
    /// Rewards are multiplied by this before entering the TD targets, so
    /// plan scores in the hundreds or thousands map to order-one values.
    pub reward_scale: f64,
    /// Gradient steps start once the buffer holds this many transitions
    /// (never fewer than `batch_size`).
    pub learning_starts: usize,
}

impl Default for DqnHyperparams {
    fn default() -> Self {
        Self {
            episodes: 300,
            replay_capacity: 5000,
            batch_size: 32,
            gamma: 0.99,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_episodes: 200.0,
            learning_rate: 1e-3,
            target_sync_interval: 100,
            seed: 0,
            render_dims: [16, 16, 16],
            reward_scale: 1e-3,
            learning_starts: 64,
        }
    }
}

impl DqnHyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DqnError::InvalidHyperparams(m));
        if !(0.0 <= self.epsilon_end && self.epsilon_end <= self.epsilon_start && self.epsilon_start <= 1.0) {
            return bad(format!(
                "need 0 <= epsilon_end ({}) <= epsilon_start ({}) <= 1",
                self.epsilon_end, self.epsilon_start
            ));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return bad(format!(
                "replay_capacity {} must be at least batch_size {} (> 0)",
                self.replay_capacity, self.batch_size
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.target_sync_interval == 0 {
            return bad("target_sync_interval must be positive".into());
        }
        if !(self.epsilon_decay_episodes >= 0.0) {
            return bad("epsilon_decay_episodes must be non-negative".into());
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return bad(format!("reward_scale {} must be positive", self.reward_scale));
        }
        if self.render_dims.contains(&0) {
            return bad("render_dims must be positive".into());
        }
        Ok(())
    }

    /// Linear decay from `epsilon_start` to `epsilon_end` over
    /// `epsilon_decay_episodes`, constant afterwards.
    pub fn epsilon(&self, episode: usize) -> f64 {
        if episode as f64 >= self.epsilon_decay_episodes {
            return self.epsilon_end;
        }
        let frac = episode as f64 / self.epsilon_decay_episodes;
        self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)
    }
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub state: Arc<StateTensor>,
    pub action: usize,
    pub reward_delta: f64,
    pub next: Arc<StateTensor>,
    pub done: bool,
    /// Actions that are legal in the next state; the TD target maximises
    /// over these only.
    pub next_valid: Vec<bool>,
}

/// Fixed-capacity FIFO of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    /// Draws `n` distinct transitions uniformly.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Transition> {
        sample(rng, self.items.len(), n).into_iter().map(|i| &self.items[i]).collect()
    }
}

/// `r` for terminal transitions, `r + γ·max Q_target(s′)` otherwise.
pub fn td_target(reward: f64, done: bool, gamma: f64, next_q: &[f64]) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * next_q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// ε-greedy choice. With `ε >= 1` this is exactly one `gen_range(0..n)`
/// draw; with `ε <= 0` the rng is untouched and the result is the argmax.
pub fn select_action<R: Rng + ?Sized>(net: &QNetwork, state: &StateTensor, epsilon: f64, rng: &mut R) -> Result<usize> {
    let all = vec![true; net.n_actions()];
    select_action_masked(net, state, epsilon, &all, rng)
}

/// Legal actions in the current state: angle bins not yet used, and STOP
/// once at least one beam is placed. Nothing is legal after the episode ends.
pub fn valid_actions(env: &Environment) -> Vec<bool> {
    let cfg = env.config();
    let st = env.state();
    let mut mask: Vec<bool> = (0..cfg.angle_bins)
        .map(|b| !st.done && !st.chosen_angles.contains(&cfg.bin_angle(b)))
        .collect();
    mask.push(!st.done && !st.chosen_angles.is_empty());
    mask
}

/// Index of the largest value among `mask`ed-in entries.
pub fn masked_argmax(values: &[f64], mask: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if mask[i] && best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// ε-greedy over the legal actions. Exploration draws uniformly among legal
/// actions (one `gen_range(0..n_legal)` draw); exploitation is the argmax
/// over legal actions. With every action legal this is [`select_action`].
pub fn select_action_masked<R: Rng + ?Sized>(
    net: &QNetwork,
    state: &StateTensor,
    epsilon: f64,
    mask: &[bool],
    rng: &mut R,
) -> Result<usize> {
    let legal: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if legal.is_empty() || mask.len() != net.n_actions() {
        return Err(DqnError::InvalidHyperparams(format!(
            "action mask of length {} with {} legal entries for {} actions",
            mask.len(),
            legal.len(),
            net.n_actions()
        )));
    }
    let explore = epsilon >= 1.0 || (epsilon > 0.0 && rng.gen::<f64>() < epsilon);
    if explore {
        return Ok(legal[rng.gen_range(0..legal.len())]);
    }
    let q = net.forward(state)?;
    Ok(masked_argmax(&q, mask).expect("mask has a legal action"))
}

#[derive(Debug, Clone)]
pub struct TrainingLog {
    /// Undiscounted, unscaled return per episode (final score minus any
    /// invalid-action penalties).
    pub episode_returns: Vec<f64>,
    pub episode_lengths: Vec<usize>,
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedDqn {
    pub net: QNetwork,
    pub log: TrainingLog,
}

/// Trains a Q-network on environments produced by `env_factory` (called
/// once). Episode `e` resets the environment with seed `hyper.seed + e`.
pub fn dqn_train<F>(env_factory: F, hyper: &DqnHyperparams) -> Result<TrainedDqn>
where
    F: FnOnce() -> Result<Environment, EnvError>,
{
    dqn_train_with(env_factory, hyper, |_, _| {})
}

/// As [`dqn_train`], calling `on_episode(index, return)` after each episode.
pub fn dqn_train_with<F, C>(env_factory: F, hyper: &DqnHyperparams, mut on_episode: C) -> Result<TrainedDqn>
where
    F: FnOnce() -> Result<Environment, EnvError>,
    C: FnMut(usize, f64),
{
    hyper.validate()?;
    let mut env = env_factory()?;
    let n_actions = env.config().n_actions();
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut net = QNetwork::new(hyper.render_dims, n_actions, hyper.seed)?;
    let mut target = net.clone();
    let mut opt = Adam::new(net.param_count(), hyper.learning_rate);
    let mut buffer = ReplayBuffer::new(hyper.replay_capacity);
    let learn_from = hyper.learning_starts.max(hyper.batch_size);
    let mut log = TrainingLog {
        episode_returns: Vec::with_capacity(hyper.episodes),
        episode_lengths: Vec::with_capacity(hyper.episodes),
        losses: Vec::new(),
    };
    let mut grad_steps = 0usize;

    for episode in 0..hyper.episodes {
        env.reset(hyper.seed.wrapping_add(episode as u64));
        let eps = hyper.epsilon(episode);
        let mut state = Arc::new(render_state(env.state(), hyper.render_dims)?);
        let mut ret = 0.0;
        let mut steps = 0;
        loop {
            let mask = valid_actions(&env);
            let action = select_action_masked(&net, &state, eps, &mask, &mut rng)?;
            let out = env.step_index(action)?;
            ret += out.reward_delta;
            steps += 1;
            let next = Arc::new(render_state(env.state(), hyper.render_dims)?);
            buffer.push(Transition {
                state: Arc::clone(&state),
                action,
                reward_delta: out.reward_delta,
                next: Arc::clone(&next),
                done: out.done,
                next_valid: valid_actions(&env),
            });

            if buffer.len() >= learn_from {
                let batch = buffer.sample(hyper.batch_size, &mut rng);
                let mut targets = Vec::with_capacity(batch.len());
                for t in &batch {
                    let r = t.reward_delta * hyper.reward_scale;
                    let y = if t.done {
                        r
                    } else {
                        let q = target.forward(&t.next)?;
                        let legal: Vec<f64> = q.iter().zip(&t.next_valid).filter(|(_, &ok)| ok).map(|(&v, _)| v).collect();
                        td_target(r, false, hyper.gamma, &legal)
                    };
                    targets.push(y);
                }
                let states: Vec<&StateTensor> = batch.iter().map(|t| t.state.as_ref()).collect();
                let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
                let loss = net.train_step(&mut opt, &states, &actions, &targets)?;
                log.losses.push(loss);
                grad_steps += 1;
                if grad_steps.is_multiple_of(hyper.target_sync_interval) {
                    target.copy_from(&net);
                }
            }

            state = next;
            if out.done {
                break;
            }
        }
        log.episode_returns.push(ret);
        log.episode_lengths.push(steps);
        on_episode(episode, ret);
    }
    Ok(TrainedDqn { net, log })
}

/// Runs one ε-greedy episode over legal actions and returns the
/// chosen angles and the episode's final score.
pub fn rollout<R: Rng + ?Sized>(
    env: &mut Environment,
    net: &QNetwork,
    epsilon: f64,
    seed: u64,
    rng: &mut R,
) -> Result<(Vec<f64>, f64)> {
    env.reset(seed);
    let dims = net.input_dims();
    while !env.state().done {
        let s = render_state(env.state(), dims)?;
        let a = select_action_masked(net, &s, epsilon, &valid_actions(env), rng)?;
        env.step_index(a)?;
    }
    Ok((env.state().chosen_angles.clone(), env.state().last_score))
}
