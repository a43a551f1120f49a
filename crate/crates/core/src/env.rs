//! Cart-pole balancing environment.
//!
//! Standard cart-pole equations of motion with explicit Euler integration.
//! An episode scores +1 for every step and ends when the pole falls past the
//! angle limit, the cart leaves the track, or the score reaches `max_steps`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnvError {
    #[error("step called on a terminated episode")]
    EpisodeTerminated,
}

/// Cart-pole observation: position (m), velocity (m/s), pole angle (rad),
/// pole angular velocity (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnvState<T> {
    pub cart_position: T,
    pub cart_velocity: T,
    pub pole_angle: T,
    pub pole_angular_velocity: T,
}

impl<T: Scalar> EnvState<T> {
    pub const DIM: usize = 4;

    pub fn new(cart_position: T, cart_velocity: T, pole_angle: T, pole_angular_velocity: T) -> Self {
        Self { cart_position, cart_velocity, pole_angle, pole_angular_velocity }
    }

    pub fn zero() -> Self {
        Self::from_array([T::zero(); 4])
    }

    pub fn to_array(&self) -> [T; 4] {
        [self.cart_position, self.cart_velocity, self.pole_angle, self.pole_angular_velocity]
    }

    pub fn from_array(a: [T; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Left,
    Right,
}

impl Action {
    /// Index into a `[p_left, p_right]` policy pair.
    pub fn index(self) -> usize {
        match self {
            Action::Left => 0,
            Action::Right => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Action::Left
        } else {
            Action::Right
        }
    }

    /// Samples an action from `[p_left, p_right]`.
    pub fn sample<T: Scalar, R: Rng + ?Sized>(policy: &[T; 2], rng: &mut R) -> Self {
        let u: f64 = rng.random();
        if u < policy[0].as_f64() {
            Action::Left
        } else {
            Action::Right
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TerminationCause {
    PoleFell,
    CartOutOfRange,
    MaxScore,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig<T> {
    pub gravity: T,
    pub cart_mass: T,
    pub pole_mass: T,
    pub pole_half_length: T,
    pub force_magnitude: T,
    pub time_step: T,
    pub position_limit: T,
    pub angle_limit: T,
    pub max_steps: u32,
    pub init_noise_half_width: T,
}

impl<T: Scalar> Default for EnvConfig<T> {
    fn default() -> Self {
        Self {
            gravity: T::lit(9.8),
            cart_mass: T::lit(1.0),
            pole_mass: T::lit(0.1),
            pole_half_length: T::lit(0.5),
            force_magnitude: T::lit(10.0),
            time_step: T::lit(0.02),
            position_limit: T::lit(2.4),
            angle_limit: T::lit(12.0 * 2.0 * std::f64::consts::PI / 360.0),
            max_steps: 500,
            init_noise_half_width: T::lit(0.05),
        }
    }
}

impl<T: Scalar> EnvConfig<T> {
    /// One Euler step of the cart-pole dynamics under `action`.
    pub fn dynamics(&self, s: &EnvState<T>, action: Action) -> EnvState<T> {
        let force = match action {
            Action::Left => -self.force_magnitude,
            Action::Right => self.force_magnitude,
        };
        let total_mass = self.cart_mass + self.pole_mass;
        let pole_mass_length = self.pole_mass * self.pole_half_length;
        let (sin, cos) = s.pole_angle.sin_cos();

        let temp = (force + pole_mass_length * s.pole_angular_velocity * s.pole_angular_velocity * sin)
            / total_mass;
        let angular_acc = (self.gravity * sin - cos * temp)
            / (self.pole_half_length
                * (T::lit(4.0 / 3.0) - self.pole_mass * cos * cos / total_mass));
        let acc = temp - pole_mass_length * angular_acc * cos / total_mass;

        let dt = self.time_step;
        EnvState {
            cart_position: s.cart_position + dt * s.cart_velocity,
            cart_velocity: s.cart_velocity + dt * acc,
            pole_angle: s.pole_angle + dt * s.pole_angular_velocity,
            pole_angular_velocity: s.pole_angular_velocity + dt * angular_acc,
        }
    }

    /// Termination cause for a state reached after `steps` steps, if any.
    /// Reaching the score cap takes precedence over a simultaneous fall.
    pub fn classify(&self, s: &EnvState<T>, steps: u32) -> Option<TerminationCause> {
        if steps >= self.max_steps {
            Some(TerminationCause::MaxScore)
        } else if s.pole_angle.abs() > self.angle_limit || !s.pole_angle.is_finite() {
            Some(TerminationCause::PoleFell)
        } else if s.cart_position.abs() > self.position_limit || !s.cart_position.is_finite() {
            Some(TerminationCause::CartOutOfRange)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome<T> {
    pub next_state: EnvState<T>,
    pub reward: T,
    pub cause: Option<TerminationCause>,
}

impl<T> StepOutcome<T> {
    pub fn terminated(&self) -> bool {
        self.cause.is_some()
    }
}

/// A single live cart-pole episode.
#[derive(Debug, Clone)]
pub struct CartPole<T> {
    config: EnvConfig<T>,
    state: EnvState<T>,
    steps: u32,
    done: bool,
}

impl<T: Scalar> CartPole<T> {
    pub fn new(config: EnvConfig<T>) -> Self {
        Self { config, state: EnvState::zero(), steps: 0, done: false }
    }

    /// Starts an episode from an arbitrary state.
    pub fn from_state(config: EnvConfig<T>, state: EnvState<T>) -> Self {
        Self { config, state, steps: 0, done: false }
    }

    pub fn config(&self) -> &EnvConfig<T> {
        &self.config
    }

    pub fn state(&self) -> &EnvState<T> {
        &self.state
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    /// Draws each component uniformly from `±init_noise_half_width`.
    pub fn reset(&mut self, seed: u64) -> EnvState<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = self.config.init_noise_half_width.as_f64();
        let mut draw = || T::lit(if w > 0.0 { rng.random_range(-w..=w) } else { 0.0 });
        self.state = EnvState::new(draw(), draw(), draw(), draw());
        self.steps = 0;
        self.done = false;
        self.state
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome<T>, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeTerminated);
        }
        self.state = self.config.dynamics(&self.state, action);
        self.steps += 1;
        let cause = self.config.classify(&self.state, self.steps);
        self.done = cause.is_some();
        Ok(StepOutcome { next_state: self.state, reward: T::one(), cause })
    }
}

/// One recorded step of an episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition<T> {
    pub state: EnvState<T>,
    pub policy: [T; 2],
    pub action: Action,
    pub reward: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode<T> {
    pub trajectory: Vec<Transition<T>>,
    pub cause: TerminationCause,
}

impl<T> Episode<T> {
    /// Number of steps survived.
    pub fn score(&self) -> u32 {
        self.trajectory.len() as u32
    }
}

/// Plays one episode, sampling actions from `policy` with an RNG derived
/// from `seed`.
pub fn run_episode<T, P>(config: EnvConfig<T>, seed: u64, mut policy: P) -> Episode<T>
where
    T: Scalar,
    P: FnMut(&EnvState<T>) -> [T; 2],
{
    let mut env = CartPole::new(config);
    let mut state = env.reset(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut trajectory = Vec::new();
    loop {
        let probs = policy(&state);
        let action = Action::sample(&probs, &mut rng);
        let out = env.step(action).expect("episode is live inside the loop");
        trajectory.push(Transition { state, policy: probs, action, reward: out.reward });
        if let Some(cause) = out.cause {
            return Episode { trajectory, cause };
        }
        state = out.next_state;
    }
}
