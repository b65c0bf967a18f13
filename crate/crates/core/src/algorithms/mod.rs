//! REINFORCE, A2C, TRPO, PPO and V-MPO updates plus the shared value
//! regression.
//!
//! A [`Learner`] owns the networks and all optimizer and multiplier state.
//! [`Learner::update`] consumes one collected batch: it fills advantages,
//! runs the algorithm's epoch/minibatch loop and reports [`UpdateStats`].

mod losses;
mod tabular_mc;
mod trpo;
mod vmpo;


use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use losses::{
    a2c_loss, mean_kl, mean_kl_and_grad, old_dists, ppo_loss, reinforce_loss, surrogate_value, trpo_policy_gradient,
    trpo_surrogate_loss, value_loss, vmpo_policy_loss, PolicyGradient,
};
pub use tabular_mc::{
    exact_softmax_gradient, importance_weighted_samples, importance_weighted_value, score_gradient_study,
    softmax_policy, GradientStudy, McStats,
};
pub use trpo::{conjugate_gradient, fisher_vector_product, max_step_scale, trpo_step, FisherOperator, TrpoOutcome, TrpoSettings};
pub use vmpo::{
    vmpo_psi_weights, vmpo_select_top_half, vmpo_temperature_loss, vmpo_trust_region_loss, TrustRegionLoss,
    VmpoState,
};

use crate::dist::kl_estimate;
use crate::error::{config, contract, Error, Result};
use crate::nn::{read_f64s, write_f64s};
use crate::optim::{clip_global_norm, AdamState};
use crate::policy::{Policy, ValueFn};
use crate::rollout::{minibatch_epochs, normalize_advantages, Minibatch, TrajectoryBatch};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Reinforce,
    A2c,
    Trpo,
    Ppo,
    Vmpo,
}

impl Algo {
    pub const ALL: [Algo; 5] = [Algo::Reinforce, Algo::A2c, Algo::Trpo, Algo::Ppo, Algo::Vmpo];

    pub fn as_str(self) -> &'static str {
        match self {
            Algo::Reinforce => "reinforce",
            Algo::A2c => "a2c",
            Algo::Trpo => "trpo",
            Algo::Ppo => "ppo",
            Algo::Vmpo => "vmpo",
        }
    }

    pub fn uses_value(self) -> bool {
        self != Algo::Reinforce
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algo {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Algo::ALL
            .into_iter()
            .find(|a| a.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| config(format!("unknown algorithm '{s}'")))
    }
}

/// Whether a normalization runs over the whole batch or each minibatch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Batch,
    Minibatch,
}

impl FromStr for Scope {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "batch" => Ok(Scope::Batch),
            "minibatch" => Ok(Scope::Minibatch),
            _ => Err(config(format!("unknown scope '{s}'"))),
        }
    }
}

impl Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            Scope::Batch => "batch",
            Scope::Minibatch => "minibatch",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AdvantageEstimator {
    Gae,
    /// Bootstrapped n-step returns over the unroll, i.e. GAE with λ = 1.
    NStep,
}

impl FromStr for AdvantageEstimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "gae" => Ok(AdvantageEstimator::Gae),
            "nstep" => Ok(AdvantageEstimator::NStep),
            _ => Err(config(format!("unknown advantage estimator '{s}'"))),
        }
    }
}

impl AdvantageEstimator {
    pub fn as_str(self) -> &'static str {
        match self {
            AdvantageEstimator::Gae => "gae",
            AdvantageEstimator::NStep => "nstep",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlgoConfig {
    pub algo: Algo,
    pub lr: f64,
    /// Final learning rate as a fraction of `lr` under the linear decay.
    pub lr_floor_fraction: f64,
    pub minibatches: usize,
    pub epochs: usize,
    pub value_epochs: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub normalize_advantages: bool,
    pub normalize_scope: Scope,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    /// Steps per environment per batch. For REINFORCE, the minimum number of
    /// transitions gathered as complete episodes.
    pub unroll: usize,
    pub num_envs: usize,
    pub kl_target: f64,
    pub cg_damping: f64,
    pub cg_max_iters: usize,
    pub cg_tol: f64,
    pub ls_max_iters: usize,
    pub ls_shrink: f64,
    pub ppo_clip: f64,
    pub eta_min: f64,
    pub nu_min: f64,
    pub eta_init: f64,
    pub nu_mu_init: f64,
    pub nu_sigma_init: f64,
    pub eps_nu_mu: f64,
    pub eps_nu_sigma: f64,
    pub eps_eta: f64,
    pub weights_scope: Scope,
    pub advantage_estimator: AdvantageEstimator,
}

impl AlgoConfig {
    pub fn defaults(algo: Algo) -> Self {
        let mut c = Self {
            algo,
            lr: 3e-4,
            lr_floor_fraction: 0.9,
            minibatches: 8,
            epochs: 10,
            value_epochs: 10,
            gamma: 0.99,
            lambda: 0.95,
            normalize_advantages: true,
            normalize_scope: Scope::Batch,
            entropy_coef: 0.0,
            max_grad_norm: 0.5,
            unroll: 2048,
            num_envs: 8,
            kl_target: 0.01,
            cg_damping: 0.1,
            cg_max_iters: 10,
            cg_tol: 1e-10,
            ls_max_iters: 10,
            ls_shrink: 0.8,
            ppo_clip: 0.2,
            eta_min: 1e-8,
            nu_min: 1e-8,
            eta_init: 1.0,
            nu_mu_init: 1.0,
            nu_sigma_init: 1.0,
            eps_nu_mu: 0.01,
            eps_nu_sigma: 5e-5,
            eps_eta: 0.01,
            weights_scope: Scope::Minibatch,
            advantage_estimator: AdvantageEstimator::Gae,
        };
        match algo {
            Algo::Reinforce => {
                c.minibatches = 1;
                c.epochs = 1;
                c.value_epochs = 0;
                c.normalize_advantages = false;
                c.num_envs = 1;
            }
            Algo::A2c => {
                c.epochs = 1;
                c.value_epochs = 1;
                c.entropy_coef = 0.1;
            }
            Algo::Trpo => {
                c.epochs = 1;
                c.value_epochs = 10;
            }
            Algo::Ppo => {}
            Algo::Vmpo => c.normalize_advantages = false,
        }
        c
    }

    pub const KEYS: [&'static str; 30] = [
        "lr",
        "lr_floor_fraction",
        "minibatches",
        "epochs",
        "value_epochs",
        "gamma",
        "lambda",
        "normalize_advantages",
        "normalize_scope",
        "entropy_coef",
        "max_grad_norm",
        "unroll",
        "num_envs",
        "kl_target",
        "cg_damping",
        "cg_max_iters",
        "cg_tol",
        "ls_max_iters",
        "ls_shrink",
        "ppo_clip",
        "eta_min",
        "nu_min",
        "eta_init",
        "nu_mu_init",
        "nu_sigma_init",
        "eps_nu_mu",
        "eps_nu_sigma",
        "eps_eta",
        "weights_scope",
        "advantage_estimator",
    ];

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim().parse().map_err(|_| config(format!("invalid value '{v}' for {key}")))
        }
        match key {
            "lr" => self.lr = num(key, value)?,
            "lr_floor_fraction" => self.lr_floor_fraction = num(key, value)?,
            "minibatches" => self.minibatches = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "value_epochs" => self.value_epochs = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "normalize_advantages" => self.normalize_advantages = num(key, value)?,
            "normalize_scope" => self.normalize_scope = value.parse()?,
            "entropy_coef" => self.entropy_coef = num(key, value)?,
            "max_grad_norm" => self.max_grad_norm = num(key, value)?,
            "unroll" => self.unroll = num(key, value)?,
            "num_envs" => self.num_envs = num(key, value)?,
            "kl_target" => self.kl_target = num(key, value)?,
            "cg_damping" => self.cg_damping = num(key, value)?,
            "cg_max_iters" => self.cg_max_iters = num(key, value)?,
            "cg_tol" => self.cg_tol = num(key, value)?,
            "ls_max_iters" => self.ls_max_iters = num(key, value)?,
            "ls_shrink" => self.ls_shrink = num(key, value)?,
            "ppo_clip" => self.ppo_clip = num(key, value)?,
            "eta_min" => self.eta_min = num(key, value)?,
            "nu_min" => self.nu_min = num(key, value)?,
            "eta_init" => self.eta_init = num(key, value)?,
            "nu_mu_init" => self.nu_mu_init = num(key, value)?,
            "nu_sigma_init" => self.nu_sigma_init = num(key, value)?,
            "eps_nu_mu" => self.eps_nu_mu = num(key, value)?,
            "eps_nu_sigma" => self.eps_nu_sigma = num(key, value)?,
            "eps_eta" => self.eps_eta = num(key, value)?,
            "weights_scope" => self.weights_scope = value.parse()?,
            "advantage_estimator" => self.advantage_estimator = value.parse()?,
            _ => return Err(config(format!("unknown algorithm key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("max_grad_norm", self.max_grad_norm),
            ("kl_target", self.kl_target),
            ("ppo_clip", self.ppo_clip),
            ("eta_min", self.eta_min),
            ("nu_min", self.nu_min),
            ("eta_init", self.eta_init),
            ("nu_mu_init", self.nu_mu_init),
            ("nu_sigma_init", self.nu_sigma_init),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config(format!("{k} must be positive")));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return Err(config("gamma and lambda must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.lr_floor_fraction) {
            return Err(config("lr_floor_fraction must lie in [0, 1]"));
        }
        if !(self.ls_shrink > 0.0 && self.ls_shrink < 1.0) {
            return Err(config("ls_shrink must lie in (0, 1)"));
        }
        if self.unroll == 0 || self.num_envs == 0 || self.minibatches == 0 || self.epochs == 0 {
            return Err(config("unroll, num_envs, minibatches and epochs must be positive"));
        }
        if self.algo == Algo::Reinforce && self.num_envs != 1 {
            return Err(config("REINFORCE collects episodes from a single environment"));
        }
        if self.algo != Algo::Reinforce && !(self.unroll * self.num_envs).is_multiple_of(self.minibatches) {
            return Err(config("batch size must be divisible by the number of minibatches"));
        }
        if self.eps_nu_mu < 0.0 || self.eps_nu_sigma < 0.0 || self.eps_eta < 0.0 || self.entropy_coef < 0.0 {
            return Err(config("KL targets and the entropy coefficient must be non-negative"));
        }
        Ok(())
    }

    pub fn trpo_settings(&self) -> TrpoSettings {
        TrpoSettings {
            delta: self.kl_target,
            damping: self.cg_damping,
            cg_iters: self.cg_max_iters,
            cg_tol: self.cg_tol,
            ls_iters: self.ls_max_iters,
            shrink: self.ls_shrink,
        }
    }

    fn effective_lambda(&self) -> f64 {
        match self.advantage_estimator {
            AdvantageEstimator::Gae => self.lambda,
            AdvantageEstimator::NStep => 1.0,
        }
    }
}

/// Diagnostics of one call to [`Learner::update`].
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    /// Mean policy entropy on the batch after the update.
    pub entropy: f64,
    /// Mean `r − 1 − ln r` between the behavior and updated policies.
    pub approx_kl: f64,
    /// Mean analytic KL of the accepted TRPO step.
    pub exact_kl: Option<f64>,
    pub clip_fraction: Option<f64>,
    pub eta: Option<f64>,
    pub nu_mu: Option<f64>,
    pub nu_sigma: Option<f64>,
    /// Mean pre-clipping policy gradient norm.
    pub grad_norm: f64,
    pub rejected_update: Option<bool>,
    /// Largest `|Σψ − 1|` over the update's minibatches.
    pub psi_weight_error: Option<f64>,
}

/// Networks, optimizers and multipliers of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct Learner {
    pub cfg: AlgoConfig,
    pub policy: Policy,
    pub value: Option<ValueFn>,
    pub policy_opt: AdamState,
    pub value_opt: AdamState,
    pub vmpo: VmpoState,
    /// Adam state over `(η, ν_μ, ν_σ)`.
    pub vmpo_opt: AdamState,
    pub rng: ChaCha8Rng,
}

#[derive(Default)]
struct Running {
    policy_loss: f64,
    value_loss: f64,
    grad_norm: f64,
    clip: f64,
    policy_steps: usize,
    value_steps: usize,
}

impl Running {
    fn mean(total: f64, n: usize) -> f64 {
        if n == 0 {
            0.0
        } else {
            total / n as f64
        }
    }
}

impl Learner {
    pub fn new(cfg: AlgoConfig, policy: Policy, value: Option<ValueFn>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if cfg.algo.uses_value() != value.is_some() {
            return Err(config(format!(
                "{} {} a value network",
                cfg.algo,
                if cfg.algo.uses_value() { "needs" } else { "does not use" }
            )));
        }
        let value_len = value.as_ref().map_or(0, |v| v.net.len());
        let vmpo = VmpoState {
            eta: cfg.eta_init,
            nu_mu: cfg.nu_mu_init,
            nu_sigma: cfg.nu_sigma_init,
        };
        Ok(Self {
            policy_opt: AdamState::new(policy.num_params()),
            value_opt: AdamState::new(value_len),
            vmpo,
            vmpo_opt: AdamState::new(3),
            rng: ChaCha8Rng::seed_from_u64(seed),
            cfg,
            policy,
            value,
        })
    }

    /// Fills advantages and return targets for the configured algorithm.
    pub fn prepare(&self, batch: &mut TrajectoryBatch) -> Result<()> {
        let c = &self.cfg;
        if c.algo == Algo::Reinforce {
            batch.compute_mc_returns(c.gamma)?;
        } else {
            batch.compute_gae(c.gamma, c.effective_lambda())?;
        }
        if c.normalize_advantages && c.normalize_scope == Scope::Batch {
            batch.advantages = normalize_advantages(&batch.advantages)?;
        }
        Ok(())
    }

    fn minibatch_advantages(&self, mb: &mut Minibatch) -> Result<()> {
        if self.cfg.normalize_advantages && self.cfg.normalize_scope == Scope::Minibatch {
            mb.advantages = normalize_advantages(&mb.advantages)?;
        }
        Ok(())
    }

    fn policy_step(&mut self, mut grad: Vec<f64>, lr: f64) -> Result<f64> {
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical("non-finite policy gradient".into()));
        }
        let norm = clip_global_norm(&mut grad, self.cfg.max_grad_norm);
        let mut flat = self.policy.flat();
        self.policy_opt.step(&mut flat, &grad, lr)?;
        self.policy.set_flat(&flat)?;
        Ok(norm)
    }

    /// One clipped Adam step on the value regression; returns the loss.
    fn value_step(&mut self, mb: &Minibatch, lr: f64) -> Result<f64> {
        let value = self.value.as_mut().ok_or_else(|| contract("no value network"))?;
        let (loss, mut grad) = value_loss(value, mb)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical("non-finite value loss".into()));
        }
        clip_global_norm(&mut grad, self.cfg.max_grad_norm);
        self.value_opt.step(value.net.flat_mut(), &grad, lr)?;
        Ok(loss)
    }

    /// Consumes one batch. Advantages are computed here; `lr` comes from
    /// the caller's schedule.
    pub fn update(&mut self, batch: &mut TrajectoryBatch, lr: f64) -> Result<UpdateStats> {
        if batch.is_empty() {
            return Err(contract("empty batch"));
        }
        if batch.head_dim != self.policy.head_dim() || batch.obs_dim != self.policy.obs_dim() {
            return Err(contract("batch does not match the policy"));
        }
        self.prepare(batch)?;
        let mut run = Running::default();
        let mut stats = UpdateStats::default();
        match self.cfg.algo {
            Algo::Reinforce => {
                let mb = batch.full();
                let pg = reinforce_loss(&self.policy, &mb)?;
                run.policy_loss += pg.loss;
                run.grad_norm += self.policy_step(pg.grad, lr)?;
                run.policy_steps += 1;
            }
            Algo::A2c | Algo::Ppo => self.clipped_or_plain(batch, lr, &mut run)?,
            Algo::Trpo => {
                let mb = batch.full();
                let out = trpo_step(&mut self.policy, &mb, &self.cfg.trpo_settings())?;
                run.policy_loss += -out.surrogate_after;
                run.grad_norm += out.grad_norm;
                run.policy_steps += 1;
                stats.exact_kl = Some(out.kl);
                stats.rejected_update = Some(out.rejected);
                self.value_epochs(batch, self.cfg.value_epochs, lr, &mut run)?;
            }
            Algo::Vmpo => {
                stats.psi_weight_error = Some(self.vmpo_epochs(batch, lr, &mut run)?);
                stats.eta = Some(self.vmpo.eta);
                stats.nu_mu = Some(self.vmpo.nu_mu);
                stats.nu_sigma = Some(self.vmpo.nu_sigma);
            }
        }
        if self.cfg.algo == Algo::Ppo {
            stats.clip_fraction = Some(Running::mean(run.clip, run.policy_steps));
        }
        stats.policy_loss = Running::mean(run.policy_loss, run.policy_steps);
        stats.value_loss = Running::mean(run.value_loss, run.value_steps);
        stats.grad_norm = Running::mean(run.grad_norm, run.policy_steps);

        let dists = self.policy.dists(&batch.obs, batch.len())?;
        let (mut ent, mut kl) = (0.0, 0.0);
        for (i, d) in dists.iter().enumerate() {
            ent += d.entropy();
            let a = &batch.raw_actions[i * batch.act_dim..(i + 1) * batch.act_dim];
            kl += kl_estimate(batch.logp[i], d.log_prob(a)?);
        }
        stats.entropy = ent / batch.len() as f64;
        stats.approx_kl = kl / batch.len() as f64;
        Ok(stats)
    }

    fn clipped_or_plain(&mut self, batch: &TrajectoryBatch, lr: f64, run: &mut Running) -> Result<()> {
        let sets = minibatch_epochs(batch.len(), self.cfg.minibatches, self.cfg.epochs, &mut self.rng)?;
        for idx in sets {
            let mut mb = batch.gather(&idx);
            self.minibatch_advantages(&mut mb)?;
            let pg = if self.cfg.algo == Algo::Ppo {
                ppo_loss(&self.policy, &mb, self.cfg.ppo_clip, self.cfg.entropy_coef)?
            } else {
                a2c_loss(&self.policy, &mb, self.cfg.entropy_coef)?
            };
            run.policy_loss += pg.loss;
            run.clip += pg.clip_fraction;
            run.grad_norm += self.policy_step(pg.grad, lr)?;
            run.policy_steps += 1;
            run.value_loss += self.value_step(&mb, lr)?;
            run.value_steps += 1;
        }
        Ok(())
    }

    fn value_epochs(&mut self, batch: &TrajectoryBatch, epochs: usize, lr: f64, run: &mut Running) -> Result<()> {
        if epochs == 0 {
            return Ok(());
        }
        for idx in minibatch_epochs(batch.len(), self.cfg.minibatches, epochs, &mut self.rng)? {
            let mb = batch.gather(&idx);
            run.value_loss += self.value_step(&mb, lr)?;
            run.value_steps += 1;
        }
        Ok(())
    }

    /// Returns the largest deviation of a minibatch's ψ-weight sum from 1.
    fn vmpo_epochs(&mut self, batch: &TrajectoryBatch, lr: f64, run: &mut Running) -> Result<f64> {
        let c = self.cfg.clone();
        let top = vmpo_select_top_half(&batch.advantages)?;
        let mut member = vec![false; batch.len()];
        for &i in &top {
            member[i] = true;
        }
        let top_adv: Vec<f64> = top.iter().map(|&i| batch.advantages[i]).collect();
        let mut psi_err: f64 = 0.0;
        for idx in minibatch_epochs(batch.len(), c.minibatches, c.epochs, &mut self.rng)? {
            let mb = batch.gather(&idx);
            let local: Vec<usize> = (0..idx.len()).filter(|&k| member[idx[k]]).collect();
            let mut weights = vec![0.0; idx.len()];
            let mut d_eta = 0.0;
            match c.weights_scope {
                Scope::Minibatch if !local.is_empty() => {
                    let adv: Vec<f64> = local.iter().map(|&k| mb.advantages[k]).collect();
                    let w = vmpo_psi_weights(&adv, self.vmpo.eta);
                    psi_err = psi_err.max((w.iter().sum::<f64>() - 1.0).abs());
                    for (&k, wk) in local.iter().zip(w) {
                        weights[k] = wk;
                    }
                    d_eta = vmpo_temperature_loss(&adv, self.vmpo.eta, c.eps_eta).1;
                }
                Scope::Minibatch => {}
                Scope::Batch => {
                    let w = vmpo_psi_weights(&top_adv, self.vmpo.eta);
                    psi_err = psi_err.max((w.iter().sum::<f64>() - 1.0).abs());
                    let pos: std::collections::HashMap<usize, f64> = top.iter().copied().zip(w).collect();
                    for &k in &local {
                        weights[k] = pos[&idx[k]];
                    }
                    d_eta = vmpo_temperature_loss(&top_adv, self.vmpo.eta, c.eps_eta).1;
                }
            }
            let pg = vmpo_policy_loss(&self.policy, &mb, &weights)?;
            let tr = vmpo_trust_region_loss(&self.policy, &mb, &self.vmpo, c.eps_nu_mu, c.eps_nu_sigma)?;
            let grad: Vec<f64> = pg.grad.iter().zip(&tr.grad).map(|(a, b)| a + b).collect();
            run.policy_loss += pg.loss + tr.loss;
            run.grad_norm += self.policy_step(grad, lr)?;
            run.policy_steps += 1;

            let mut mult = self.vmpo.to_vec();
            self.vmpo_opt.step(&mut mult, &[d_eta, tr.dnu_mu, tr.dnu_sigma], lr)?;
            self.vmpo = VmpoState::from_slice(&mult);
            self.vmpo.project(c.eta_min, c.nu_min);

            run.value_loss += self.value_step(&mb, lr)?;
            run.value_steps += 1;
        }
        Ok(psi_err)
    }

    /// Serializes networks, optimizer moments, multipliers and the shuffle
    /// RNG position.
    pub fn write_state<W: Write>(&self, w: &mut W) -> Result<()> {
        self.policy.write_to(w)?;
        self.write_rest(w)
    }

    /// [`Learner::write_state`] without the leading policy block.
    pub fn write_rest<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&[self.value.is_some() as u8])?;
        if let Some(v) = &self.value {
            v.net.write_to(w)?;
        }
        self.policy_opt.write_to(w)?;
        self.value_opt.write_to(w)?;
        write_f64s(w, &self.vmpo.to_vec())?;
        self.vmpo_opt.write_to(w)?;
        w.write_all(&self.rng.get_seed())?;
        w.write_all(&self.rng.get_stream().to_le_bytes())?;
        w.write_all(&self.rng.get_word_pos().to_le_bytes())?;
        Ok(())
    }

    pub fn read_state<R: Read>(cfg: AlgoConfig, space: crate::envs::ActionSpace, r: &mut R) -> Result<Self> {
        let policy = Policy::read_from(r, space)?;
        Self::read_rest(cfg, policy, r)
    }

    pub fn read_rest<R: Read>(cfg: AlgoConfig, policy: Policy, r: &mut R) -> Result<Self> {
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let value = match flag[0] {
            0 => None,
            1 => Some(ValueFn { net: crate::nn::Params::read_from(r)? }),
            _ => return Err(Error::Schema("bad value-network flag".into())),
        };
        let policy_opt = AdamState::read_from(r)?;
        let value_opt = AdamState::read_from(r)?;
        let mult = read_f64s(r)?;
        if mult.len() != 3 {
            return Err(Error::Schema("multiplier block must hold three values".into()));
        }
        let vmpo_opt = AdamState::read_from(r)?;
        let mut seed = [0u8; 32];
        r.read_exact(&mut seed)?;
        let mut stream = [0u8; 8];
        r.read_exact(&mut stream)?;
        let mut pos = [0u8; 16];
        r.read_exact(&mut pos)?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(u64::from_le_bytes(stream));
        rng.set_word_pos(u128::from_le_bytes(pos));
        if policy_opt.len() != policy.num_params() || value_opt.len() != value.as_ref().map_or(0, |v| v.net.len()) {
            return Err(Error::Schema("optimizer state does not match the networks".into()));
        }
        let mut learner = Learner::new(cfg, policy, value, 0)?;
        learner.policy_opt = policy_opt;
        learner.value_opt = value_opt;
        learner.vmpo = VmpoState::from_slice(&mult);
        learner.vmpo_opt = vmpo_opt;
        learner.rng = rng;
        Ok(learner)
    }
}
