//! Policy and value networks built on [`crate::nn`].
//!
//! A Gaussian policy's network outputs the action mean; the log standard
//! deviation is a separate, state-independent parameter vector appended to
//! the network's flat parameters.

use std::io::{Read, Write};

use rand::Rng;

use crate::dist::{squash, Dist};
use crate::envs::ActionSpace;
use crate::error::{contract, Error, Result};
use crate::nn::{read_f64s, write_f64s, Activation, Architecture, ForwardCache, Params};

pub const LOG_STD_MIN: f64 = -10.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    net: Params,
    log_std: Vec<f64>,
    space: ActionSpace,
}

/// Network activations for one batch of observations.
pub struct PolicyPass {
    cache: ForwardCache,
    outputs: Vec<f64>,
}

impl PolicyPass {
    pub fn batch(&self) -> usize {
        self.cache.batch()
    }
}

impl Policy {
    pub fn new(obs_dim: usize, hidden: &[usize], activation: Activation, space: ActionSpace, seed: u64) -> Result<Self> {
        let out = match &space {
            ActionSpace::Discrete(n) => *n,
            ActionSpace::Continuous(b) => b.dim(),
        };
        let arch = Architecture::mlp(obs_dim, hidden, out, activation)?;
        let log_std = match &space {
            ActionSpace::Discrete(_) => Vec::new(),
            ActionSpace::Continuous(b) => vec![0.0; b.dim()],
        };
        Ok(Self {
            net: Params::init(arch, seed),
            log_std,
            space,
        })
    }

    pub fn from_parts(net: Params, log_std: Vec<f64>, space: ActionSpace) -> Result<Self> {
        let expected = match &space {
            ActionSpace::Discrete(n) => (*n, 0),
            ActionSpace::Continuous(b) => (b.dim(), b.dim()),
        };
        if net.arch().output_dim() != expected.0 || log_std.len() != expected.1 {
            return Err(Error::Config("policy parameters do not match the action space".into()));
        }
        Ok(Self { net, log_std, space })
    }

    pub fn net(&self) -> &Params {
        &self.net
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn space(&self) -> &ActionSpace {
        &self.space
    }

    pub fn obs_dim(&self) -> usize {
        self.net.arch().input_dim()
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.space, ActionSpace::Discrete(_))
    }

    /// Width of one distribution's head parameters.
    pub fn head_dim(&self) -> usize {
        match &self.space {
            ActionSpace::Discrete(n) => *n,
            ActionSpace::Continuous(b) => 2 * b.dim(),
        }
    }

    pub fn action_dim(&self) -> usize {
        match &self.space {
            ActionSpace::Discrete(_) => 1,
            ActionSpace::Continuous(b) => b.dim(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.net.len() + self.log_std.len()
    }

    /// Network parameters followed by `log_std`.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.net.flat().to_vec();
        v.extend_from_slice(&self.log_std);
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(contract("policy flat vector has the wrong length"));
        }
        let n = self.net.len();
        self.net.flat_mut().copy_from_slice(&flat[..n]);
        self.log_std.copy_from_slice(&flat[n..]);
        Ok(())
    }

    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        let mut p = self.clone();
        p.set_flat(flat)?;
        Ok(p)
    }

    pub fn forward(&self, obs: &[f64], batch: usize) -> Result<PolicyPass> {
        let (outputs, cache) = self.net.forward(obs, batch)?;
        Ok(PolicyPass { cache, outputs })
    }

    fn clamped_log_std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect()
    }

    fn dist_from_output(&self, row: &[f64], log_std: &[f64]) -> Result<Dist> {
        if self.is_discrete() {
            Dist::categorical(row.to_vec())
        } else {
            Dist::gaussian(row.to_vec(), log_std.to_vec())
        }
    }

    pub fn dists_from(&self, pass: &PolicyPass) -> Result<Vec<Dist>> {
        let ls = self.clamped_log_std();
        let out = self.net.arch().output_dim();
        pass.outputs
            .chunks_exact(out)
            .map(|row| self.dist_from_output(row, &ls))
            .collect()
    }

    pub fn dists(&self, obs: &[f64], batch: usize) -> Result<Vec<Dist>> {
        let ls = self.clamped_log_std();
        let out = self.net.arch().output_dim();
        self.net
            .predict(obs, batch)?
            .chunks_exact(out)
            .map(|row| self.dist_from_output(row, &ls))
            .collect()
    }

    pub fn dist(&self, obs: &[f64]) -> Result<Dist> {
        Ok(self.dists(obs, 1)?.remove(0))
    }

    /// Head parameters of every distribution in the batch, row-major.
    pub fn heads(&self, obs: &[f64], batch: usize) -> Result<Vec<f64>> {
        Ok(self.dists(obs, batch)?.iter().flat_map(|d| d.head()).collect())
    }

    /// Chains per-sample head gradients (row-major, `head_dim` wide) into a
    /// flat parameter gradient.
    pub fn backward_heads(&self, pass: &PolicyPass, head_grads: &[f64]) -> Result<Vec<f64>> {
        let n = pass.batch();
        let hd = self.head_dim();
        if head_grads.len() != n * hd {
            return Err(contract("head gradient shape mismatch"));
        }
        let out = self.net.arch().output_dim();
        let mut out_grad = Vec::with_capacity(n * out);
        let mut ls_grad = vec![0.0; self.log_std.len()];
        for row in head_grads.chunks_exact(hd) {
            out_grad.extend_from_slice(&row[..out]);
            for (j, g) in row[out..].iter().enumerate() {
                ls_grad[j] += g;
            }
        }
        // The clamp blocks gradient outside its range.
        for (g, l) in ls_grad.iter_mut().zip(&self.log_std) {
            if !(LOG_STD_MIN..=LOG_STD_MAX).contains(l) {
                *g = 0.0;
            }
        }
        let mut grad = self.net.backward(&pass.cache, &out_grad)?.flat;
        grad.extend(ls_grad);
        Ok(grad)
    }

    /// Directional derivative of every head along a flat parameter tangent.
    pub fn jvp_heads(&self, pass: &PolicyPass, tangent: &[f64]) -> Result<Vec<f64>> {
        if tangent.len() != self.num_params() {
            return Err(contract("tangent length mismatch"));
        }
        let n_net = self.net.len();
        let d_out = self.net.jvp(&pass.cache, &tangent[..n_net])?;
        if self.is_discrete() {
            return Ok(d_out);
        }
        let out = self.net.arch().output_dim();
        let d_ls: Vec<f64> = tangent[n_net..]
            .iter()
            .zip(&self.log_std)
            .map(|(t, l)| if (LOG_STD_MIN..=LOG_STD_MAX).contains(l) { *t } else { 0.0 })
            .collect();
        let mut heads = Vec::with_capacity(pass.batch() * self.head_dim());
        for row in d_out.chunks_exact(out) {
            heads.extend_from_slice(row);
            heads.extend_from_slice(&d_ls);
        }
        Ok(heads)
    }

    /// Sums a per-sample loss over the batch and returns it with its flat
    /// gradient. `f` maps (sample index, distribution) to the sample's loss
    /// and its gradient with respect to the head.
    pub fn loss_and_grad<F>(&self, obs: &[f64], batch: usize, mut f: F) -> Result<(f64, Vec<f64>)>
    where
        F: FnMut(usize, &Dist) -> Result<(f64, Vec<f64>)>,
    {
        let pass = self.forward(obs, batch)?;
        let dists = self.dists_from(&pass)?;
        let hd = self.head_dim();
        let mut total = 0.0;
        let mut head_grads = Vec::with_capacity(batch * hd);
        for (i, d) in dists.iter().enumerate() {
            let (l, g) = f(i, d)?;
            debug_assert_eq!(g.len(), hd);
            total += l;
            head_grads.extend(g);
        }
        let grad = self.backward_heads(&pass, &head_grads)?;
        Ok((total, grad))
    }

    /// Samples a raw action and returns it with its environment action and log-probability.
    pub fn act_dist<R: Rng + ?Sized>(&self, dist: &Dist, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let raw = dist.sample(rng);
        let logp = dist.log_prob(&raw)?;
        let env = self.to_env_action(&raw)?;
        Ok((raw, env, logp))
    }

    pub fn to_env_action(&self, raw: &[f64]) -> Result<Vec<f64>> {
        match &self.space {
            ActionSpace::Discrete(_) => Ok(raw.to_vec()),
            ActionSpace::Continuous(b) => squash(raw, b),
        }
    }

    /// Deterministic environment action for one observation.
    pub fn mode_action(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.to_env_action(&self.dist(obs)?.mode())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        self.net.write_to(w)?;
        write_f64s(w, &self.log_std)
    }

    pub fn read_from<R: Read>(r: &mut R, space: ActionSpace) -> Result<Self> {
        let net = Params::read_from(r)?;
        let log_std = read_f64s(r)?;
        Self::from_parts(net, log_std, space)
    }
}

/// State-value network with a single linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueFn {
    pub net: Params,
}

impl ValueFn {
    pub fn new(obs_dim: usize, hidden: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        let arch = Architecture::mlp(obs_dim, hidden, 1, activation)?;
        Ok(Self { net: Params::init(arch, seed) })
    }

    pub fn predict(&self, obs: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.net.predict(obs, batch)
    }

    /// `mean((target − V(s))²)` and its gradient.
    pub fn loss_and_grad(&self, obs: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
        let n = targets.len();
        let (v, cache) = self.net.forward(obs, n)?;
        let mut loss = 0.0;
        let dout: Vec<f64> = v
            .iter()
            .zip(targets)
            .map(|(vi, ti)| {
                let e = vi - ti;
                loss += e * e;
                2.0 * e / n as f64
            })
            .collect();
        let grad = self.net.backward(&cache, &dout)?.flat;
        Ok((loss / n as f64, grad))
    }
}
