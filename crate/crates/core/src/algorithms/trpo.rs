//! Natural-gradient step with a KL trust region.

use crate::dist::Dist;
use crate::error::{contract, Error, Result};
use crate::optim::l2_norm;
use crate::policy::{Policy, PolicyPass};
use crate::rollout::Minibatch;

use super::losses::{mean_kl, surrogate_value, trpo_surrogate_loss};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `H d = g` for symmetric positive-definite `H` given as a product.
pub fn conjugate_gradient<F>(mut apply_h: F, g: &[f64], max_iters: usize, tol: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = g.len();
    let mut x = vec![0.0; n];
    let mut r = g.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    if !rr.is_finite() {
        return Err(Error::Numerical("non-finite right-hand side in conjugate gradient".into()));
    }
    for _ in 0..max_iters {
        if rr.sqrt() < tol {
            break;
        }
        let hp = apply_h(&p)?;
        if hp.len() != n {
            return Err(contract("operator output length mismatch"));
        }
        let php = dot(&p, &hp);
        if !(php.is_finite() && php > 0.0) {
            return Err(Error::Numerical("operator is not positive definite".into()));
        }
        let alpha = rr / php;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * hp[i];
        }
        let rr_new = dot(&r, &r);
        if !rr_new.is_finite() {
            return Err(Error::Numerical("non-finite residual in conjugate gradient".into()));
        }
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    Ok(x)
}

/// Hessian of the mean `KL(π_old ‖ π_θ)` at `θ = θ_old`, plus damping.
///
/// At the expansion point the KL Hessian reduces to `Jᵀ F J` with `J` the
/// head Jacobian and `F` the per-sample head Fisher matrix, so the product
/// is a forward tangent pass, a closed-form head product and one backward
/// pass. The forward pass is shared across products.
pub struct FisherOperator<'a> {
    policy: &'a Policy,
    pass: PolicyPass,
    dists: Vec<Dist>,
    damping: f64,
}

impl<'a> FisherOperator<'a> {
    pub fn new(policy: &'a Policy, obs: &[f64], batch: usize, damping: f64) -> Result<Self> {
        let pass = policy.forward(obs, batch)?;
        let dists = policy.dists_from(&pass)?;
        Ok(Self { policy, pass, dists, damping })
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let n = self.dists.len() as f64;
        let hd = self.policy.head_dim();
        let jv = self.policy.jvp_heads(&self.pass, v)?;
        let mut heads = Vec::with_capacity(jv.len());
        for (d, row) in self.dists.iter().zip(jv.chunks_exact(hd)) {
            heads.extend(d.fisher_vector(row)?.into_iter().map(|x| x / n));
        }
        let mut out = self.policy.backward_heads(&self.pass, &heads)?;
        for (o, vi) in out.iter_mut().zip(v) {
            *o += self.damping * vi;
        }
        Ok(out)
    }
}

pub fn fisher_vector_product(policy: &Policy, mb: &Minibatch, v: &[f64], damping: f64) -> Result<Vec<f64>> {
    FisherOperator::new(policy, &mb.obs, mb.len, damping)?.apply(v)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrpoSettings {
    pub delta: f64,
    pub damping: f64,
    pub cg_iters: usize,
    pub cg_tol: f64,
    pub ls_iters: usize,
    pub shrink: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrpoOutcome {
    pub accepted: bool,
    /// Line search tried every candidate and kept the old parameters.
    pub rejected: bool,
    /// `β^m` of the accepted candidate.
    pub step_fraction: f64,
    /// Mean analytic KL of the accepted candidate (0 if none).
    pub kl: f64,
    pub surrogate_before: f64,
    pub surrogate_after: f64,
    pub grad_norm: f64,
    pub entropy: f64,
}

/// Scale that puts the quadratic-model KL of `step · d` at `delta`.
pub fn max_step_scale(d: &[f64], fd: &[f64], delta: f64) -> f64 {
    let shs = dot(d, fd);
    if shs > 0.0 {
        (2.0 * delta / shs).sqrt()
    } else {
        0.0
    }
}

/// One policy update: CG direction, maximal step, backtracking line search.
pub fn trpo_step(policy: &mut Policy, mb: &Minibatch, s: &TrpoSettings) -> Result<TrpoOutcome> {
    let pg = trpo_surrogate_loss(policy, mb)?;
    let surr0 = -pg.loss;
    let g: Vec<f64> = pg.grad.iter().map(|x| -x).collect();
    let grad_norm = l2_norm(&g);
    let mut out = TrpoOutcome {
        accepted: false,
        rejected: false,
        step_fraction: 0.0,
        kl: 0.0,
        surrogate_before: surr0,
        surrogate_after: surr0,
        grad_norm,
        entropy: pg.entropy,
    };
    if grad_norm == 0.0 {
        return Ok(out);
    }
    let fisher = FisherOperator::new(policy, &mb.obs, mb.len, s.damping)?;
    let d = conjugate_gradient(|v| fisher.apply(v), &g, s.cg_iters, s.cg_tol)?;
    let scale = max_step_scale(&d, &fisher.apply(&d)?, s.delta);
    drop(fisher);
    let theta = policy.flat();
    let mut frac = 1.0;
    for _ in 0..s.ls_iters {
        let cand: Vec<f64> = theta.iter().zip(&d).map(|(t, di)| t + frac * scale * di).collect();
        let trial = policy.with_flat(&cand)?;
        let surr = surrogate_value(&trial, mb)?;
        let kl = mean_kl(&trial, mb)?;
        if surr > surr0 && kl <= s.delta {
            if kl > s.delta + 1e-9 {
                return Err(Error::Property("accepted step violates the trust region".into()));
            }
            *policy = trial;
            out.accepted = true;
            out.step_fraction = frac;
            out.kl = kl;
            out.surrogate_after = surr;
            return Ok(out);
        }
        frac *= s.shrink;
    }
    out.rejected = true;
    Ok(out)
}
