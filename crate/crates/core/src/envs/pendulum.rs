//! Torque-limited pendulum swing-up. `theta = 0` is upright.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ActionSpace, Env, EnvSpec, StepResult};
use crate::dist::ActionBounds;
use crate::error::{contract, Result};

pub const DT: f64 = 0.05;
pub const GRAVITY: f64 = 10.0;
pub const MASS: f64 = 1.0;
pub const LENGTH: f64 = 1.0;
pub const MAX_SPEED: f64 = 8.0;
pub const MAX_TORQUE: f64 = 2.0;
pub const MAX_STEPS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PendulumState {
    pub theta: f64,
    pub omega: f64,
    pub t: usize,
}

impl PendulumState {
    pub fn observation(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.omega]
    }
}

/// Wraps an angle into `[-pi, pi)`.
pub fn angle_normalize(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

pub fn pendulum_step(state: &mut PendulumState, torque: f64, max_steps: usize) -> StepResult {
    let u = torque.clamp(-MAX_TORQUE, MAX_TORQUE);
    let th = angle_normalize(state.theta);
    // `angle_normalize(pi)` is `-pi`; the square is the same either way.
    let cost = th * th + 0.1 * state.omega * state.omega + 0.001 * u * u;

    let acc = 3.0 * GRAVITY / (2.0 * LENGTH) * state.theta.sin() + 3.0 / (MASS * LENGTH * LENGTH) * u;
    let omega = (state.omega + acc * DT).clamp(-MAX_SPEED, MAX_SPEED);
    state.theta += omega * DT;
    state.omega = omega;
    state.t += 1;
    StepResult {
        obs: state.observation(),
        reward: -cost,
        terminal: false,
        truncated: state.t >= max_steps,
    }
}

pub struct Pendulum {
    spec: EnvSpec,
    state: PendulumState,
    rng: ChaCha8Rng,
}

impl Pendulum {
    pub fn new(seed: u64, stream: u64, max_steps: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let bounds = ActionBounds::new(vec![-MAX_TORQUE], vec![MAX_TORQUE]).expect("static bounds");
        Self {
            spec: EnvSpec {
                obs_dim: 3,
                action_space: ActionSpace::Continuous(bounds),
                max_episode_steps: max_steps,
            },
            state: PendulumState { theta: PI, omega: 0.0, t: 0 },
            rng,
        }
    }

    pub fn state(&self) -> PendulumState {
        self.state
    }

    pub fn set_state(&mut self, state: PendulumState) {
        self.state = state;
    }
}

impl Env for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self) -> Vec<f64> {
        self.state = PendulumState {
            theta: self.rng.random_range(-PI..PI),
            omega: self.rng.random_range(-1.0..1.0),
            t: 0,
        };
        self.state.observation()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        match action {
            [u] if u.is_finite() => Ok(pendulum_step(&mut self.state, *u, self.spec.max_episode_steps)),
            _ => Err(contract(format!("invalid pendulum action {action:?}"))),
        }
    }
}
