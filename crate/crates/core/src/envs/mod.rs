//! Episodic environments, a vectorized runner and preprocessing wrappers.

mod cartpole;
mod mdp;
mod normalize;
mod pendulum;

use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use cartpole::{cartpole_step, CartPole, CartPoleState};
pub use mdp::{grid_mdp, grid_mdp_named, MdpPreset, TabularMdp};
pub use normalize::{RewardScaler, RunningNormalizer, DEFAULT_CLIP};
pub use pendulum::{angle_normalize, pendulum_step, Pendulum, PendulumState};

use crate::dist::ActionBounds;
use crate::error::{config, contract, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum ActionSpace {
    Discrete(usize),
    Continuous(ActionBounds),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub obs_dim: usize,
    pub action_space: ActionSpace,
    pub max_episode_steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: f64,
    /// The episode reached a terminal state; no bootstrapping.
    pub terminal: bool,
    /// The step limit cut the episode; bootstrap from `obs`.
    pub truncated: bool,
}

impl StepResult {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

pub trait Env: Send {
    fn spec(&self) -> &EnvSpec;
    /// Starts a new episode and returns its first observation.
    fn reset(&mut self) -> Vec<f64>;
    /// Applies an environment-side action (a category index or a bounded vector).
    fn step(&mut self, action: &[f64]) -> Result<StepResult>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvName {
    CartPole,
    Pendulum,
}

impl FromStr for EnvName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cartpole" => Ok(EnvName::CartPole),
            "pendulum" => Ok(EnvName::Pendulum),
            other => Err(config(format!("unknown environment '{other}'"))),
        }
    }
}

impl EnvName {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvName::CartPole => "cartpole",
            EnvName::Pendulum => "pendulum",
        }
    }

    pub fn default_max_steps(self) -> usize {
        match self {
            EnvName::CartPole => cartpole::MAX_STEPS,
            EnvName::Pendulum => pendulum::MAX_STEPS,
        }
    }
}

/// Builds an environment whose random stream is `(seed, stream)`.
pub fn make_env(name: EnvName, seed: u64, stream: u64, max_steps: Option<usize>) -> Result<Box<dyn Env>> {
    let t = max_steps.unwrap_or(name.default_max_steps());
    if t == 0 {
        return Err(config("max_steps must be at least 1"));
    }
    Ok(match name {
        EnvName::CartPole => Box::new(CartPole::new(seed, stream, t)),
        EnvName::Pendulum => Box::new(Pendulum::new(seed, stream, t)),
    })
}

/// Outcome of stepping every environment once.
#[derive(Clone, Debug, PartialEq)]
pub struct VecStep {
    /// Next observation per env; after an episode ends this is the first
    /// observation of the next one.
    pub obs: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub terminals: Vec<bool>,
    pub truncateds: Vec<bool>,
    /// Last observation of an episode that just ended.
    pub final_obs: Vec<Option<Vec<f64>>>,
}

/// Independent environments stepped in lockstep with automatic resets.
pub struct VecEnv {
    envs: Vec<Box<dyn Env>>,
    obs: Vec<Vec<f64>>,
    spec: EnvSpec,
}

impl VecEnv {
    /// Env `i` uses random stream `stream_offset + i` of `seed`.
    pub fn new(name: EnvName, num_envs: usize, seed: u64, stream_offset: u64, max_steps: Option<usize>) -> Result<Self> {
        if num_envs == 0 {
            return Err(config("need at least one environment"));
        }
        let envs = (0..num_envs)
            .map(|i| make_env(name, seed, stream_offset + i as u64, max_steps))
            .collect::<Result<Vec<_>>>()?;
        Self::from_envs(envs)
    }

    pub fn from_envs(mut envs: Vec<Box<dyn Env>>) -> Result<Self> {
        let spec = envs.first().ok_or_else(|| config("need at least one environment"))?.spec().clone();
        if envs.iter().any(|e| e.spec() != &spec) {
            return Err(config("vectorized environments must share a spec"));
        }
        let obs = envs.iter_mut().map(|e| e.reset()).collect();
        Ok(Self { envs, obs, spec })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn observations(&self) -> &[Vec<f64>] {
        &self.obs
    }

    pub fn step(&mut self, actions: &[Vec<f64>]) -> Result<VecStep> {
        if actions.len() != self.envs.len() {
            return Err(contract(format!(
                "expected {} actions, got {}",
                self.envs.len(),
                actions.len()
            )));
        }
        let n = self.envs.len();
        let mut out = VecStep {
            obs: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            terminals: Vec::with_capacity(n),
            truncateds: Vec::with_capacity(n),
            final_obs: Vec::with_capacity(n),
        };
        for (i, env) in self.envs.iter_mut().enumerate() {
            let r = env.step(&actions[i])?;
            let done = r.done();
            out.rewards.push(r.reward);
            out.terminals.push(r.terminal);
            out.truncateds.push(r.truncated);
            if done {
                out.final_obs.push(Some(r.obs));
                self.obs[i] = env.reset();
            } else {
                out.final_obs.push(None);
                self.obs[i] = r.obs;
            }
            out.obs.push(self.obs[i].clone());
        }
        Ok(out)
    }
}

pub fn vec_step(venv: &mut VecEnv, actions: &[Vec<f64>]) -> Result<VecStep> {
    venv.step(actions)
}
