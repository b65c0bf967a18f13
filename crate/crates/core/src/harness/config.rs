//! Line-based experiment configuration.
//!
//! ```text
//! # comment
//! algo = ppo
//! env = cartpole
//! total_steps = 300000
//! seeds = 0, 1, 2
//! net.policy_hidden = 32, 32, 32, 32
//! algo.ppo_clip = 0.2
//! ```
//!
//! `algo` selects the defaults that `algo.*` keys then override, so it is
//! applied first wherever it appears. Unknown and repeated keys are errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::algorithms::{Algo, AlgoConfig};
use crate::envs::EnvName;
use crate::error::{config, Result};
use crate::nn::Activation;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub algo: AlgoConfig,
    pub env: EnvName,
    pub total_steps: u64,
    /// Evaluate once at least this many env steps have passed since the last
    /// evaluation.
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub seeds: Vec<u64>,
    pub policy_hidden: Vec<usize>,
    pub value_hidden: Vec<usize>,
    pub activation: Activation,
    pub normalize_obs: bool,
    pub scale_rewards: bool,
    pub max_episode_steps: Option<usize>,
    /// End a run early once an evaluation reaches this mean return.
    pub stop_at_return: Option<f64>,
    pub out_dir: PathBuf,
}

pub const TOP_KEYS: [&str; 15] = [
    "algo",
    "env",
    "total_steps",
    "eval_every",
    "eval_episodes",
    "seeds",
    "net.policy_hidden",
    "net.value_hidden",
    "net.activation",
    "env.normalize_obs",
    "env.scale_rewards",
    "env.max_episode_steps",
    "stop_at_return",
    "out_dir",
    "log_dir",
];

impl ExperimentConfig {
    pub fn defaults(algo: Algo, env: EnvName) -> Self {
        Self {
            algo: AlgoConfig::defaults(algo),
            env,
            total_steps: 1_000_000,
            eval_every: 16_384,
            eval_episodes: 10,
            seeds: vec![0, 1, 2],
            policy_hidden: vec![32; 4],
            value_hidden: vec![256; 5],
            activation: Activation::Swish,
            normalize_obs: true,
            scale_rewards: true,
            max_episode_steps: None,
            stop_at_return: None,
            out_dir: PathBuf::from("runs"),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with_overrides(text, &[])
    }

    /// Parses `text`, then replaces or adds the given key/value pairs before
    /// the configuration is built.
    pub fn parse_with_overrides(text: &str, overrides: &[(&str, String)]) -> Result<Self> {
        let mut pairs: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| config(format!("line {}: expected 'key = value'", no + 1)))?;
            let k = k.trim().to_string();
            if k.is_empty() {
                return Err(config(format!("line {}: empty key", no + 1)));
            }
            if pairs.insert(k.clone(), (no + 1, v.trim().to_string())).is_some() {
                return Err(config(format!("line {}: duplicate key '{k}'", no + 1)));
            }
        }
        for (k, v) in overrides {
            pairs.insert(k.to_string(), (0, v.clone()));
        }
        let algo: Algo = match pairs.remove("algo") {
            Some((_, v)) => v.parse()?,
            None => Algo::Ppo,
        };
        let env: EnvName = match pairs.remove("env") {
            Some((_, v)) => v.parse()?,
            None => EnvName::CartPole,
        };
        let mut cfg = Self::defaults(algo, env);
        let mut ordered: Vec<(usize, String, String)> = pairs.into_iter().map(|(k, (n, v))| (n, k, v)).collect();
        ordered.sort();
        for (no, k, v) in ordered {
            cfg.set(&k, &v).map_err(|e| config(format!("line {no}: {e}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim().parse().map_err(|_| config(format!("invalid value '{v}' for {key}")))
        }
        fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
            if v.trim().is_empty() {
                return Ok(Vec::new());
            }
            v.split(',').map(|x| num(key, x)).collect()
        }
        if let Some(sub) = key.strip_prefix("algo.") {
            return self.algo.set(sub, value);
        }
        match key {
            "algo" => {
                let algo: Algo = value.parse()?;
                self.algo = AlgoConfig::defaults(algo);
            }
            "env" => self.env = value.parse()?,
            "total_steps" => self.total_steps = num(key, value)?,
            "eval_every" => self.eval_every = num(key, value)?,
            "eval_episodes" => self.eval_episodes = num(key, value)?,
            "seeds" => self.seeds = list(key, value)?,
            "net.policy_hidden" => self.policy_hidden = list(key, value)?,
            "net.value_hidden" => self.value_hidden = list(key, value)?,
            "net.activation" => self.activation = Activation::parse(value.trim())?,
            "env.normalize_obs" => self.normalize_obs = num(key, value)?,
            "env.scale_rewards" => self.scale_rewards = num(key, value)?,
            "env.max_episode_steps" => {
                self.max_episode_steps = match value.trim() {
                    "" | "none" => None,
                    v => Some(num(key, v)?),
                }
            }
            "stop_at_return" => {
                self.stop_at_return = match value.trim() {
                    "" | "none" => None,
                    v => Some(num(key, v)?),
                }
            }
            "out_dir" | "log_dir" => self.out_dir = PathBuf::from(value.trim()),
            _ => return Err(config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.algo.validate()?;
        if self.seeds.is_empty() {
            return Err(config("at least one seed is required"));
        }
        if self.eval_every == 0 || self.eval_episodes == 0 {
            return Err(config("eval_every and eval_episodes must be positive"));
        }
        if self.policy_hidden.contains(&0) || self.value_hidden.contains(&0) {
            return Err(config("hidden layer sizes must be positive"));
        }
        if self.max_episode_steps == Some(0) {
            return Err(config("max_episode_steps must be positive"));
        }
        Ok(())
    }

    /// Canonical text form; parsing it yields the same configuration.
    pub fn to_text(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        let mut out = String::new();
        out += &format!("algo = {}\nenv = {}\n", self.algo.algo, self.env.as_str());
        out += &format!("total_steps = {}\neval_every = {}\neval_episodes = {}\n", self.total_steps, self.eval_every, self.eval_episodes);
        out += &format!("seeds = {}\n", self.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(", "));
        out += &format!("net.policy_hidden = {}\nnet.value_hidden = {}\nnet.activation = {}\n", join(&self.policy_hidden), join(&self.value_hidden), self.activation.name());
        out += &format!("env.normalize_obs = {}\nenv.scale_rewards = {}\n", self.normalize_obs, self.scale_rewards);
        if let Some(m) = self.max_episode_steps {
            out += &format!("env.max_episode_steps = {m}\n");
        }
        if let Some(t) = self.stop_at_return {
            out += &format!("stop_at_return = {t:?}\n");
        }
        out += &format!("out_dir = {}\n", self.out_dir.display());
        let v = serde_json::to_value(&self.algo).expect("config serializes");
        for key in AlgoConfig::KEYS {
            let text = match &v[key] {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            out += &format!("algo.{key} = {text}\n");
        }
        out
    }
}
