//! Advantage actor-critic agent with Monte-Carlo returns.
//!
//! The policy network samples actions; every (state, policy) pair it acts on
//! is appended to the local replay memory. After each episode the value
//! network regresses onto the discounted returns and the policy network takes
//! one step along the advantage-weighted log-likelihood gradient.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, WireError};
use crate::env::{Action, CartPole, EnvConfig, EnvState, Episode, Transition};
use crate::nn::{Activation, Mlp, MlpConfig, NnError, Target, TrainBatch};
use crate::scalar::Scalar;

/// Episodes in the rolling mission window.
pub const MISSION_WINDOW: usize = 10;
/// Rolling average score that completes the mission.
pub const MISSION_TARGET: f64 = 490.0;

#[derive(Debug, Error, PartialEq)]
pub enum AgentError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("empty trajectory")]
    EmptyTrajectory,
}

/// (state, action policy) pair as recorded during play.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry<T> {
    pub state: EnvState<T>,
    pub policy: [T; 2],
}

/// Raw experience replay memory. Wire entries are six little-endian `f32`s:
/// the four state components then `p_left`, `p_right`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReplayMemory<T> {
    entries: Vec<ReplayEntry<T>>,
}

impl<T: Scalar> ReplayMemory<T> {
    pub const ENTRY_BYTES: usize = 24;

    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn push(&mut self, entry: ReplayEntry<T>) {
        self.entries.push(entry);
    }

    pub fn extend(&mut self, other: &ReplayMemory<T>) {
        self.entries.extend_from_slice(&other.entries);
    }

    pub fn entries(&self) -> &[ReplayEntry<T>] {
        &self.entries
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ReplayEntry<T>> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::ENTRY_BYTES * self.len());
        for e in &self.entries {
            for v in e.state.to_array() {
                codec::put_f32(&mut out, v.as_f32());
            }
            codec::put_f32(&mut out, e.policy[0].as_f32());
            codec::put_f32(&mut out, e.policy[1].as_f32());
        }
        out
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self, WireError> {
        codec::check_len(bytes, Self::ENTRY_BYTES)?;
        let entries = bytes
            .chunks_exact(Self::ENTRY_BYTES)
            .enumerate()
            .map(|(i, c)| {
                let v: Vec<f32> = (0..6).map(|k| codec::get_f32(c, 4 * k)).collect();
                if v.iter().any(|x| !x.is_finite()) || v[4] < 0.0 || v[5] < 0.0 {
                    return Err(WireError::InvalidValue { entry: i });
                }
                let t = |x: f32| T::lit(x as f64);
                Ok(ReplayEntry {
                    state: EnvState::new(t(v[0]), t(v[1]), t(v[2]), t(v[3])),
                    policy: [t(v[4]), t(v[5])],
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { entries })
    }
}

impl<T> FromIterator<ReplayEntry<T>> for ReplayMemory<T> {
    fn from_iter<I: IntoIterator<Item = ReplayEntry<T>>>(iter: I) -> Self {
        Self { entries: iter.into_iter().collect() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig<T> {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub activation: Activation,
    pub discount: T,
    pub policy_lr: T,
    pub value_lr: T,
}

impl<T: Scalar> Default for AgentConfig<T> {
    fn default() -> Self {
        Self {
            hidden_layers: 2,
            hidden_width: 24,
            activation: Activation::Tanh,
            discount: T::lit(0.99),
            policy_lr: T::lit(1e-3),
            value_lr: T::lit(5e-3),
        }
    }
}

impl<T> AgentConfig<T> {
    pub fn policy_net(&self) -> MlpConfig {
        MlpConfig { activation: self.activation, ..MlpConfig::policy(self.hidden_layers, self.hidden_width) }
    }

    pub fn value_net(&self) -> MlpConfig {
        MlpConfig { activation: self.activation, ..MlpConfig::value(self.hidden_layers, self.hidden_width) }
    }
}

/// Summed per-episode losses at the pre-update parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeLosses<T> {
    /// `-sum_t A_t ln pi(a_t | s_t)`
    pub policy: T,
    /// `sum_t (G_t - V(s_t))^2`
    pub value: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MissionProgress {
    pub rolling_average: f64,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct A2cAgent<T> {
    pub config: AgentConfig<T>,
    pub policy_net: Mlp<T>,
    pub value_net: Mlp<T>,
    pub local_rm: ReplayMemory<T>,
    episode_scores: Vec<u32>,
    window: VecDeque<u32>,
}

impl<T: Scalar> A2cAgent<T> {
    pub fn new(config: AgentConfig<T>, seed: u64) -> Result<Self, AgentError> {
        let policy_net = Mlp::init(config.policy_net(), seed)?;
        let value_net = Mlp::init(config.value_net(), seed.wrapping_add(0x5851_f42d_4c95_7f2d))?;
        Ok(Self::from_nets(config, policy_net, value_net))
    }

    pub fn from_nets(config: AgentConfig<T>, policy_net: Mlp<T>, value_net: Mlp<T>) -> Self {
        Self {
            config,
            policy_net,
            value_net,
            local_rm: ReplayMemory::new(),
            episode_scores: Vec::new(),
            window: VecDeque::with_capacity(MISSION_WINDOW),
        }
    }

    pub fn policy(&self, state: &EnvState<T>) -> [T; 2] {
        let out = self.policy_net.forward(&state.to_array()).expect("policy net takes 4 inputs");
        [out[0], out[1]]
    }

    pub fn value(&self, state: &EnvState<T>) -> T {
        self.value_net.forward(&state.to_array()).expect("value net takes 4 inputs")[0]
    }

    /// Samples from the current policy and records the pre-action policy in
    /// the local replay memory.
    pub fn select_action<R: Rng + ?Sized>(&mut self, state: &EnvState<T>, rng: &mut R) -> (Action, [T; 2]) {
        let policy = self.policy(state);
        let action = Action::sample(&policy, rng);
        self.local_rm.push(ReplayEntry { state: *state, policy });
        (action, policy)
    }

    /// Plays one episode without training.
    pub fn play_episode<R: Rng + ?Sized>(&mut self, env: &EnvConfig<T>, rng: &mut R) -> Episode<T> {
        let mut cart = CartPole::new(*env);
        let mut state = cart.reset(rng.random());
        let mut trajectory = Vec::new();
        loop {
            let (action, policy) = self.select_action(&state, rng);
            let out = cart.step(action).expect("episode is live inside the loop");
            trajectory.push(Transition { state, policy, action, reward: out.reward });
            if let Some(cause) = out.cause {
                return Episode { trajectory, cause };
            }
            state = out.next_state;
        }
    }

    /// Play, train and score one episode.
    pub fn run_episode<R: Rng + ?Sized>(&mut self, env: &EnvConfig<T>, rng: &mut R) -> Result<u32, AgentError> {
        let episode = self.play_episode(env, rng);
        self.train_on_episode(&episode.trajectory)?;
        let score = episode.score();
        self.record_score(score);
        Ok(score)
    }

    /// Discounted returns `G_t = sum_k gamma^k r_{t+k}`.
    pub fn discounted_returns(&self, trajectory: &[Transition<T>]) -> Vec<T> {
        let mut returns = vec![T::zero(); trajectory.len()];
        let mut acc = T::zero();
        for (g, t) in returns.iter_mut().zip(trajectory).rev() {
            acc = t.reward + self.config.discount * acc;
            *g = acc;
        }
        returns
    }

    /// One SGD step on each network from a finished episode.
    pub fn train_on_episode(&mut self, trajectory: &[Transition<T>]) -> Result<EpisodeLosses<T>, AgentError> {
        if trajectory.is_empty() {
            return Err(AgentError::EmptyTrajectory);
        }
        let returns = self.discounted_returns(trajectory);
        let mut policy_batch = TrainBatch::new();
        let mut value_batch = TrainBatch::new();
        for (t, g) in trajectory.iter().zip(&returns) {
            let input = t.state.to_array().to_vec();
            let advantage = *g - self.value(&t.state);
            policy_batch.push(input.clone(), Target::PolicyGradient { action: t.action.index(), advantage });
            value_batch.push(input, Target::Regression(vec![*g]));
        }
        let policy = self.policy_net.backward(&policy_batch)?;
        let value = self.value_net.backward(&value_batch)?;
        self.policy_net.apply_update(&policy.gradients, self.config.policy_lr)?;
        self.value_net.apply_update(&value.gradients, self.config.value_lr)?;
        let n = T::from_count(trajectory.len());
        Ok(EpisodeLosses { policy: policy.loss * n, value: value.loss * n })
    }

    pub fn record_score(&mut self, score: u32) {
        self.episode_scores.push(score);
        if self.window.len() == MISSION_WINDOW {
            self.window.pop_front();
        }
        self.window.push_back(score);
    }

    pub fn episode_scores(&self) -> &[u32] {
        &self.episode_scores
    }

    pub fn episodes_played(&self) -> usize {
        self.episode_scores.len()
    }

    pub fn mission_progress(&self) -> MissionProgress {
        let rolling_average = if self.window.is_empty() {
            0.0
        } else {
            self.window.iter().map(|&s| s as f64).sum::<f64>() / self.window.len() as f64
        };
        MissionProgress {
            rolling_average,
            complete: self.window.len() == MISSION_WINDOW && rolling_average >= MISSION_TARGET,
        }
    }
}
