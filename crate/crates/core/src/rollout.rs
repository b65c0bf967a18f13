//! Experience collection and return/advantage estimation.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::envs::{RewardScaler, RunningNormalizer, VecEnv};
use crate::error::{config, contract, Result};
use crate::policy::{Policy, ValueFn};

/// Discounted returns of one complete episode, `G_t = r_t + γ G_{t+1}`.
pub fn mc_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut g = 0.0;
    for t in (0..rewards.len()).rev() {
        g = rewards[t] + gamma * g;
        out[t] = g;
    }
    out
}

/// `k`-step advantages. `values` has one more entry than `rewards` (the value
/// after the last step). Sums stop at a terminal without bootstrapping.
pub fn nstep_advantage(rewards: &[f64], values: &[f64], terminals: &[bool], k: usize, gamma: f64) -> Result<Vec<f64>> {
    let n = rewards.len();
    if values.len() != n + 1 || terminals.len() != n {
        return Err(contract("n-step advantage inputs are misaligned"));
    }
    if k == 0 {
        return Err(config("n-step horizon must be at least 1"));
    }
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        let mut g = 0.0;
        let mut disc = 1.0;
        let mut i = 0;
        let mut ended = false;
        while i < k && t + i < n {
            g += disc * rewards[t + i];
            disc *= gamma;
            if terminals[t + i] {
                ended = true;
                i += 1;
                break;
            }
            i += 1;
        }
        if !ended {
            g += disc * values[t + i];
        }
        out.push(g - values[t]);
    }
    Ok(out)
}

/// Generalized advantage estimation over one time-ordered segment.
///
/// `values` has `n + 1` entries. A terminal step uses a next value of zero; a
/// truncated step uses its `bootstrap_values` entry. Both restart the
/// exponentially weighted sum. Returns `(advantages, advantages + values)`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    terminals: &[bool],
    truncateds: &[bool],
    bootstrap_values: &[f64],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n + 1 || terminals.len() != n || truncateds.len() != n || bootstrap_values.len() != n {
        return Err(contract("GAE inputs are misaligned"));
    }
    let mut adv = vec![0.0; n];
    let mut x = 0.0;
    for t in (0..n).rev() {
        let (next_v, cut) = if terminals[t] {
            (0.0, true)
        } else if truncateds[t] {
            (bootstrap_values[t], true)
        } else {
            (values[t + 1], false)
        };
        let delta = rewards[t] + gamma * next_v - values[t];
        x = if cut { delta } else { delta + gamma * lambda * x };
        adv[t] = x;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// `(a − mean) / (std + 1e-8)` with the population standard deviation.
pub fn normalize_advantages(adv: &[f64]) -> Result<Vec<f64>> {
    if adv.len() < 2 {
        return Err(config("advantage normalization needs at least two samples"));
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(adv.iter().map(|a| (a - mean) / (std + 1e-8)).collect())
}

/// Index sets for `num_epochs` shuffled passes, each split into equal minibatches.
pub fn minibatch_epochs<R: Rng + ?Sized>(
    n: usize,
    num_minibatches: usize,
    num_epochs: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    if num_minibatches == 0 || n == 0 || !n.is_multiple_of(num_minibatches) {
        return Err(config(format!(
            "batch of {n} cannot be split into {num_minibatches} equal minibatches"
        )));
    }
    let size = n / num_minibatches;
    let mut out = Vec::with_capacity(num_minibatches * num_epochs);
    let mut perm: Vec<usize> = (0..n).collect();
    for _ in 0..num_epochs {
        perm.shuffle(rng);
        out.extend(perm.chunks_exact(size).map(|c| c.to_vec()));
    }
    Ok(out)
}

/// Transitions from `num_envs` environments, stored env-major: transition
/// `t` of env `e` sits at index `e * unroll + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryBatch {
    pub num_envs: usize,
    pub unroll: usize,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub head_dim: usize,
    /// Observations as the policy saw them (normalized if enabled).
    pub obs: Vec<f64>,
    pub raw_actions: Vec<f64>,
    pub env_actions: Vec<f64>,
    /// Rewards used for learning (scaled if enabled).
    pub rewards: Vec<f64>,
    pub raw_rewards: Vec<f64>,
    pub values: Vec<f64>,
    /// Value of the observation following each env's last step.
    pub last_values: Vec<f64>,
    pub logp: Vec<f64>,
    /// Behavior distribution parameters at collection time.
    pub old_heads: Vec<f64>,
    pub terminals: Vec<bool>,
    pub truncateds: Vec<bool>,
    /// `V(final observation)` for truncated steps, 0 elsewhere.
    pub bootstrap_values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// Raw returns of episodes that finished during collection.
    pub episode_returns: Vec<f64>,
}

/// Gathered rows of a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Minibatch {
    pub len: usize,
    pub obs: Vec<f64>,
    pub raw_actions: Vec<f64>,
    pub logp: Vec<f64>,
    pub old_heads: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub values: Vec<f64>,
}

impl Minibatch {
    pub fn action(&self, i: usize) -> &[f64] {
        let d = self.raw_actions.len() / self.len;
        &self.raw_actions[i * d..(i + 1) * d]
    }

    pub fn head(&self, i: usize) -> &[f64] {
        let d = self.old_heads.len() / self.len;
        &self.old_heads[i * d..(i + 1) * d]
    }
}

#[derive(Serialize)]
struct TransitionRecord<'a> {
    env: usize,
    t: usize,
    obs: &'a [f64],
    raw_action: &'a [f64],
    env_action: &'a [f64],
    reward: f64,
    raw_reward: f64,
    value: f64,
    log_prob: f64,
    terminal: bool,
    truncated: bool,
    bootstrap_value: f64,
    advantage: f64,
    return_target: f64,
}

impl TrajectoryBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    fn segment(&self, e: usize) -> std::ops::Range<usize> {
        e * self.unroll..(e + 1) * self.unroll
    }

    /// Fills advantages and return targets with GAE, per environment.
    pub fn compute_gae(&mut self, gamma: f64, lambda: f64) -> Result<()> {
        let mut adv = Vec::with_capacity(self.len());
        let mut ret = Vec::with_capacity(self.len());
        for e in 0..self.num_envs {
            let r = self.segment(e);
            let mut values = self.values[r.clone()].to_vec();
            values.push(self.last_values[e]);
            let (a, g) = gae(
                &self.rewards[r.clone()],
                &values,
                &self.terminals[r.clone()],
                &self.truncateds[r.clone()],
                &self.bootstrap_values[r],
                gamma,
                lambda,
            )?;
            adv.extend(a);
            ret.extend(g);
        }
        self.advantages = adv;
        self.returns = ret;
        Ok(())
    }

    /// Fills both advantages and returns with Monte-Carlo returns of complete
    /// episodes.
    pub fn compute_mc_returns(&mut self, gamma: f64) -> Result<()> {
        let mut out = Vec::with_capacity(self.len());
        for e in 0..self.num_envs {
            let r = self.segment(e);
            let mut start = r.start;
            for i in r.clone() {
                if self.terminals[i] || self.truncateds[i] {
                    out.extend(mc_returns(&self.rewards[start..=i], gamma));
                    start = i + 1;
                }
            }
            if start != r.end {
                return Err(contract("Monte-Carlo returns need complete episodes"));
            }
        }
        self.advantages = out.clone();
        self.returns = out;
        Ok(())
    }

    pub fn gather(&self, idx: &[usize]) -> Minibatch {
        fn rows(src: &[f64], width: usize, idx: &[usize]) -> Vec<f64> {
            let mut out = Vec::with_capacity(idx.len() * width);
            for &i in idx {
                out.extend_from_slice(&src[i * width..(i + 1) * width]);
            }
            out
        }
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        Minibatch {
            len: idx.len(),
            obs: rows(&self.obs, self.obs_dim, idx),
            raw_actions: rows(&self.raw_actions, self.act_dim, idx),
            logp: pick(&self.logp),
            old_heads: rows(&self.old_heads, self.head_dim, idx),
            advantages: pick(&self.advantages),
            returns: pick(&self.returns),
            values: pick(&self.values),
        }
    }

    pub fn full(&self) -> Minibatch {
        let idx: Vec<usize> = (0..self.len()).collect();
        self.gather(&idx)
    }

    /// One JSON object per transition.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let (od, ad) = (self.obs_dim, self.act_dim);
        for i in 0..self.len() {
            let rec = TransitionRecord {
                env: i / self.unroll,
                t: i % self.unroll,
                obs: &self.obs[i * od..(i + 1) * od],
                raw_action: &self.raw_actions[i * ad..(i + 1) * ad],
                env_action: &self.env_actions[i * ad..(i + 1) * ad],
                reward: self.rewards[i],
                raw_reward: self.raw_rewards[i],
                value: self.values[i],
                log_prob: self.logp[i],
                terminal: self.terminals[i],
                truncated: self.truncateds[i],
                bootstrap_value: self.bootstrap_values[i],
                advantage: self.advantages.get(i).copied().unwrap_or(f64::NAN),
                return_target: self.returns.get(i).copied().unwrap_or(f64::NAN),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Owns the training environments and their preprocessing state.
pub struct Collector {
    pub venv: VecEnv,
    pub obs_norm: Option<RunningNormalizer>,
    pub reward_scaler: Option<RewardScaler>,
    pub rng: ChaCha8Rng,
    /// Normalized current observation per env.
    current: Vec<Vec<f64>>,
    running_returns: Vec<f64>,
}

impl Collector {
    pub fn new(venv: VecEnv, normalize_obs: bool, scale_rewards: bool, gamma: f64, rng: ChaCha8Rng) -> Result<Self> {
        let n = venv.len();
        let obs_dim = venv.spec().obs_dim;
        let mut obs_norm = normalize_obs.then(|| RunningNormalizer::new(obs_dim));
        let raw: Vec<f64> = venv.observations().concat();
        if let Some(norm) = obs_norm.as_mut() {
            norm.update(&raw)?;
        }
        let current = venv
            .observations()
            .iter()
            .map(|o| obs_norm.as_ref().map_or_else(|| o.clone(), |nm| nm.apply(o)))
            .collect();
        Ok(Self {
            venv,
            obs_norm,
            reward_scaler: scale_rewards.then(|| RewardScaler::new(n, gamma)),
            rng,
            current,
            running_returns: vec![0.0; n],
        })
    }

    fn normalize(&self, o: &[f64]) -> Vec<f64> {
        self.obs_norm.as_ref().map_or_else(|| o.to_vec(), |nm| nm.apply(o))
    }

    /// Runs `unroll` steps in every environment.
    pub fn collect(&mut self, policy: &Policy, value: Option<&ValueFn>, unroll: usize) -> Result<TrajectoryBatch> {
        if unroll == 0 {
            return Err(config("unroll length must be positive"));
        }
        self.run(policy, value, Some(unroll), 0)
    }

    /// Runs complete episodes in a single environment until at least
    /// `min_steps` transitions are gathered.
    pub fn collect_episodes(&mut self, policy: &Policy, value: Option<&ValueFn>, min_steps: usize) -> Result<TrajectoryBatch> {
        if self.venv.len() != 1 {
            return Err(config("episode collection uses exactly one environment"));
        }
        self.run(policy, value, None, min_steps.max(1))
    }

    fn run(&mut self, policy: &Policy, value: Option<&ValueFn>, unroll: Option<usize>, min_steps: usize) -> Result<TrajectoryBatch> {
        let spec = self.venv.spec().clone();
        if policy.obs_dim() != spec.obs_dim {
            return Err(config("policy input size does not match the environment"));
        }
        let n = self.venv.len();
        let (od, ad, hd) = (spec.obs_dim, policy.action_dim(), policy.head_dim());
        // Time-major scratch; reordered to env-major at the end.
        let mut obs = Vec::new();
        let mut raw_actions = Vec::new();
        let mut env_actions = Vec::new();
        let mut rewards = Vec::new();
        let mut raw_rewards = Vec::new();
        let mut logp = Vec::new();
        let mut heads = Vec::new();
        let mut terminals = Vec::new();
        let mut truncateds = Vec::new();
        let mut finals: Vec<Option<Vec<f64>>> = Vec::new();
        let mut episode_returns = Vec::new();
        let mut steps = 0;
        loop {
            let batch_obs: Vec<f64> = self.current.concat();
            let dists = policy.dists(&batch_obs, n)?;
            let mut actions = Vec::with_capacity(n);
            for d in &dists {
                let (raw, env_a, lp) = policy.act_dist(d, &mut self.rng)?;
                raw_actions.extend_from_slice(&raw);
                env_actions.extend_from_slice(&env_a);
                logp.push(lp);
                heads.extend(d.head());
                actions.push(env_a);
            }
            obs.extend(batch_obs);
            let out = self.venv.step(&actions)?;
            let done: Vec<bool> = (0..n).map(|i| out.terminals[i] || out.truncateds[i]).collect();
            let scaled = match self.reward_scaler.as_mut() {
                Some(s) => s.scale(&out.rewards, &done)?,
                None => out.rewards.clone(),
            };
            rewards.extend(scaled);
            raw_rewards.extend_from_slice(&out.rewards);
            terminals.extend_from_slice(&out.terminals);
            truncateds.extend_from_slice(&out.truncateds);
            if let Some(norm) = self.obs_norm.as_mut() {
                norm.update(&out.obs.concat())?;
            }
            for i in 0..n {
                self.running_returns[i] += out.rewards[i];
                if done[i] {
                    episode_returns.push(self.running_returns[i]);
                    self.running_returns[i] = 0.0;
                }
            }
            finals.extend(out.final_obs.iter().zip(&out.truncateds).map(|(f, &tr)| {
                if tr {
                    f.as_ref().map(|o| self.normalize(o))
                } else {
                    None
                }
            }));
            self.current = out.obs.iter().map(|o| self.normalize(o)).collect();
            steps += 1;
            let finished = match unroll {
                Some(u) => steps >= u,
                None => steps >= min_steps && done[0],
            };
            if finished {
                break;
            }
        }
        let u = steps;
        let total = u * n;

        let (values, last_values, bootstrap_values) = match value {
            Some(v) => {
                let values = v.predict(&obs, total)?;
                let last = v.predict(&self.current.concat(), n)?;
                let trunc_idx: Vec<usize> = (0..total).filter(|&i| finals[i].is_some()).collect();
                let mut boot = vec![0.0; total];
                if !trunc_idx.is_empty() {
                    let rows: Vec<f64> = trunc_idx.iter().flat_map(|&i| finals[i].clone().unwrap()).collect();
                    for (k, bv) in v.predict(&rows, trunc_idx.len())?.into_iter().enumerate() {
                        boot[trunc_idx[k]] = bv;
                    }
                }
                (values, last, boot)
            }
            None => (vec![0.0; total], vec![0.0; n], vec![0.0; total]),
        };

        // Time-major index `t * n + e` to env-major `e * u + t`.
        let order: Vec<usize> = (0..n).flat_map(|e| (0..u).map(move |t| t * n + e)).collect();
        let rows = |src: &[f64], w: usize| -> Vec<f64> {
            order.iter().flat_map(|&i| src[i * w..(i + 1) * w].iter().copied()).collect()
        };
        let pick_f = |src: &[f64]| order.iter().map(|&i| src[i]).collect::<Vec<f64>>();
        let pick_b = |src: &[bool]| order.iter().map(|&i| src[i]).collect::<Vec<bool>>();
        Ok(TrajectoryBatch {
            num_envs: n,
            unroll: u,
            obs_dim: od,
            act_dim: ad,
            head_dim: hd,
            obs: rows(&obs, od),
            raw_actions: rows(&raw_actions, ad),
            env_actions: rows(&env_actions, ad),
            rewards: pick_f(&rewards),
            raw_rewards: pick_f(&raw_rewards),
            values: pick_f(&values),
            last_values,
            logp: pick_f(&logp),
            old_heads: rows(&heads, hd),
            terminals: pick_b(&terminals),
            truncateds: pick_b(&truncateds),
            bootstrap_values: pick_f(&bootstrap_values),
            advantages: Vec::new(),
            returns: Vec::new(),
            episode_returns,
        })
    }
}
