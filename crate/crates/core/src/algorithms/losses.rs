//! Per-minibatch surrogate losses. Every function returns a loss to minimize
//! and its flat gradient with respect to the policy parameters.

use crate::dist::{kl_estimate, Dist};
use crate::error::Result;
use crate::policy::{Policy, ValueFn};
use crate::rollout::Minibatch;

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyGradient {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Mean entropy of the current policy over the minibatch.
    pub entropy: f64,
    /// Mean of `r − 1 − ln r` against the behavior log-probabilities.
    pub approx_kl: f64,
    /// Fraction of samples with `|r − 1| > ε` (PPO only, else 0).
    pub clip_fraction: f64,
}

/// Drives `f(i, dist, logp) -> (loss_i, head_grad_i, clipped)` over
/// the minibatch.
fn surrogate<F>(policy: &Policy, mb: &Minibatch, mut f: F) -> Result<PolicyGradient>
where
    F: FnMut(usize, &Dist, f64) -> Result<(f64, Vec<f64>, bool)>,
{
    let n = mb.len as f64;
    let (mut ent, mut kl, mut clipped) = (0.0, 0.0, 0usize);
    let (loss, grad) = policy.loss_and_grad(&mb.obs, mb.len, |i, d| {
        let lp = d.log_prob(mb.action(i))?;
        ent += d.entropy();
        kl += kl_estimate(mb.logp[i], lp);
        let (l, g, c) = f(i, d, lp)?;
        clipped += c as usize;
        Ok((l, g))
    })?;
    Ok(PolicyGradient {
        loss,
        grad,
        entropy: ent / n,
        approx_kl: kl / n,
        clip_fraction: clipped as f64 / n,
    })
}

fn scaled(g: Vec<f64>, s: f64) -> Vec<f64> {
    g.into_iter().map(|x| x * s).collect()
}

/// `−mean(G · ln π(a|s))`, with the returns stored in `mb.advantages`.
pub fn reinforce_loss(policy: &Policy, mb: &Minibatch) -> Result<PolicyGradient> {
    let n = mb.len as f64;
    surrogate(policy, mb, |i, d, lp| {
        let w = -mb.advantages[i] / n;
        Ok((w * lp, scaled(d.grad_log_prob(mb.action(i))?, w), false))
    })
}

/// `−mean(Â · ln π(a|s) + β H(π(·|s)))`.
pub fn a2c_loss(policy: &Policy, mb: &Minibatch, entropy_coef: f64) -> Result<PolicyGradient> {
    let n = mb.len as f64;
    surrogate(policy, mb, |i, d, lp| {
        let w = -mb.advantages[i] / n;
        let mut g = scaled(d.grad_log_prob(mb.action(i))?, w);
        let mut l = w * lp;
        if entropy_coef != 0.0 {
            l -= entropy_coef * d.entropy() / n;
            for (gi, h) in g.iter_mut().zip(d.grad_entropy()) {
                *gi -= entropy_coef * h / n;
            }
        }
        Ok((l, g, false))
    })
}

/// Clipped objective `−mean(min(r Â, clip(r, 1−ε, 1+ε) Â)) − β mean(H)`.
/// Where the clipped branch is the minimum the sample contributes no
/// gradient through `r`.
pub fn ppo_loss(policy: &Policy, mb: &Minibatch, clip: f64, entropy_coef: f64) -> Result<PolicyGradient> {
    let n = mb.len as f64;
    surrogate(policy, mb, |i, d, lp| {
        let a = mb.advantages[i];
        let r = (lp - mb.logp[i]).exp();
        let rc = r.clamp(1.0 - clip, 1.0 + clip);
        let active = if a >= 0.0 { r <= 1.0 + clip } else { r >= 1.0 - clip };
        let obj = (r * a).min(rc * a);
        let mut l = -obj / n;
        let mut g = if active {
            scaled(d.grad_log_prob(mb.action(i))?, -r * a / n)
        } else {
            vec![0.0; d.num_head_params()]
        };
        if entropy_coef != 0.0 {
            l -= entropy_coef * d.entropy() / n;
            for (gi, h) in g.iter_mut().zip(d.grad_entropy()) {
                *gi -= entropy_coef * h / n;
            }
        }
        Ok((l, g, (r - 1.0).abs() > clip))
    })
}

/// Negated importance-ratio surrogate `−mean((π/π_old) Â)`.
pub fn trpo_surrogate_loss(policy: &Policy, mb: &Minibatch) -> Result<PolicyGradient> {
    let n = mb.len as f64;
    surrogate(policy, mb, |i, d, lp| {
        let ra = (lp - mb.logp[i]).exp() * mb.advantages[i];
        Ok((-ra / n, scaled(d.grad_log_prob(mb.action(i))?, -ra / n), false))
    })
}

/// Ascent direction of the ratio surrogate at the current parameters.
pub fn trpo_policy_gradient(policy: &Policy, mb: &Minibatch) -> Result<Vec<f64>> {
    Ok(scaled(trpo_surrogate_loss(policy, mb)?.grad, -1.0))
}

/// `mean((π/π_old) Â)` without a backward pass.
pub fn surrogate_value(policy: &Policy, mb: &Minibatch) -> Result<f64> {
    let dists = policy.dists(&mb.obs, mb.len)?;
    let mut total = 0.0;
    for (i, d) in dists.iter().enumerate() {
        total += (d.log_prob(mb.action(i))? - mb.logp[i]).exp() * mb.advantages[i];
    }
    Ok(total / mb.len as f64)
}

/// Behavior distributions rebuilt from the stored heads.
pub fn old_dists(mb: &Minibatch, current: &[Dist]) -> Result<Vec<Dist>> {
    current
        .iter()
        .enumerate()
        .map(|(i, d)| Dist::from_head(d, mb.head(i)))
        .collect()
}

/// Mean analytic `KL(π_old ‖ π_θ)` over the minibatch.
pub fn mean_kl(policy: &Policy, mb: &Minibatch) -> Result<f64> {
    let dists = policy.dists(&mb.obs, mb.len)?;
    let old = old_dists(mb, &dists)?;
    let mut total = 0.0;
    for (o, d) in old.iter().zip(&dists) {
        total += o.kl(d)?;
    }
    Ok(total / mb.len as f64)
}

/// [`mean_kl`] and its gradient.
pub fn mean_kl_and_grad(policy: &Policy, mb: &Minibatch) -> Result<(f64, Vec<f64>)> {
    let n = mb.len as f64;
    policy.loss_and_grad(&mb.obs, mb.len, |i, d| {
        let old = Dist::from_head(d, mb.head(i))?;
        Ok((old.kl(d)? / n, scaled(d.grad_kl_from(&old)?, 1.0 / n)))
    })
}

/// `−Σ w_i ln π(a_i|s_i)`; samples outside the selected set carry weight 0.
pub fn vmpo_policy_loss(policy: &Policy, mb: &Minibatch, weights: &[f64]) -> Result<PolicyGradient> {
    surrogate(policy, mb, |i, d, lp| {
        let w = weights[i];
        if w == 0.0 {
            return Ok((0.0, vec![0.0; d.num_head_params()], false));
        }
        Ok((-w * lp, scaled(d.grad_log_prob(mb.action(i))?, -w), false))
    })
}

/// Mean squared error of the value net against the stored return targets.
pub fn value_loss(value: &ValueFn, mb: &Minibatch) -> Result<(f64, Vec<f64>)> {
    value.loss_and_grad(&mb.obs, &mb.returns)
}
