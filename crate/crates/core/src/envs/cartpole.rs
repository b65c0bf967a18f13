//! Cart-pole balancing with Euler integration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ActionSpace, Env, EnvSpec, StepResult};
use crate::error::{contract, Result};

pub const GRAVITY: f64 = 9.8;
pub const CART_MASS: f64 = 1.0;
pub const POLE_MASS: f64 = 0.1;
/// Half the pole length.
pub const POLE_HALF_LENGTH: f64 = 0.5;
pub const FORCE_MAG: f64 = 10.0;
pub const DT: f64 = 0.02;
pub const X_THRESHOLD: f64 = 2.4;
pub const THETA_THRESHOLD: f64 = 12.0 * std::f64::consts::PI / 180.0;
pub const MAX_STEPS: usize = 500;

/// `[x, x_dot, theta, theta_dot]` plus the step counter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CartPoleState {
    pub s: [f64; 4],
    pub t: usize,
}

/// Advances the state by one step under action 0 (push left) or 1 (push right).
pub fn cartpole_step(state: &mut CartPoleState, action: usize, max_steps: usize) -> Result<StepResult> {
    if action > 1 {
        return Err(contract(format!("cart-pole action must be 0 or 1, got {action}")));
    }
    let [x, x_dot, theta, theta_dot] = state.s;
    let force = if action == 1 { FORCE_MAG } else { -FORCE_MAG };
    let (sin, cos) = theta.sin_cos();
    let total_mass = CART_MASS + POLE_MASS;
    let pole_ml = POLE_MASS * POLE_HALF_LENGTH;
    let temp = (force + pole_ml * theta_dot * theta_dot * sin) / total_mass;
    let theta_acc = (GRAVITY * sin - cos * temp)
        / (POLE_HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / total_mass));
    let x_acc = temp - pole_ml * theta_acc * cos / total_mass;

    state.s = [
        x + DT * x_dot,
        x_dot + DT * x_acc,
        theta + DT * theta_dot,
        theta_dot + DT * theta_acc,
    ];
    state.t += 1;
    let terminal = state.s[0].abs() > X_THRESHOLD || state.s[2].abs() > THETA_THRESHOLD;
    Ok(StepResult {
        obs: state.s.to_vec(),
        reward: 1.0,
        terminal,
        truncated: !terminal && state.t >= max_steps,
    })
}

pub struct CartPole {
    spec: EnvSpec,
    state: CartPoleState,
    rng: ChaCha8Rng,
}

impl CartPole {
    pub fn new(seed: u64, stream: u64, max_steps: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            spec: EnvSpec {
                obs_dim: 4,
                action_space: ActionSpace::Discrete(2),
                max_episode_steps: max_steps,
            },
            state: CartPoleState { s: [0.0; 4], t: 0 },
            rng,
        }
    }

    pub fn state(&self) -> CartPoleState {
        self.state
    }

    pub fn set_state(&mut self, state: CartPoleState) {
        self.state = state;
    }
}

impl Env for CartPole {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self) -> Vec<f64> {
        let mut s = [0.0; 4];
        for v in &mut s {
            *v = self.rng.random_range(-0.05..0.05);
        }
        self.state = CartPoleState { s, t: 0 };
        s.to_vec()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        match action {
            [a] if *a == 0.0 || *a == 1.0 => {
                cartpole_step(&mut self.state, *a as usize, self.spec.max_episode_steps)
            }
            _ => Err(contract(format!("invalid cart-pole action {action:?}"))),
        }
    }
}
