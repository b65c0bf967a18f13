//! E-step weights, temperature and KL multipliers.

use serde::Serialize;

use crate::dist::Dist;
use crate::error::{config, Error, Result};
use crate::policy::Policy;
use crate::rollout::Minibatch;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VmpoState {
    pub eta: f64,
    pub nu_mu: f64,
    pub nu_sigma: f64,
}

impl VmpoState {
    pub fn to_vec(self) -> Vec<f64> {
        vec![self.eta, self.nu_mu, self.nu_sigma]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self { eta: v[0], nu_mu: v[1], nu_sigma: v[2] }
    }

    /// Clamps the temperature and both multipliers to their floors.
    pub fn project(&mut self, eta_min: f64, nu_min: f64) {
        self.eta = self.eta.max(eta_min);
        self.nu_mu = self.nu_mu.max(nu_min);
        self.nu_sigma = self.nu_sigma.max(nu_min);
    }
}

/// Indices of the `⌈n/2⌉` largest advantages in ascending index order.
/// Among equal advantages the lower index wins.
pub fn vmpo_select_top_half(adv: &[f64]) -> Result<Vec<usize>> {
    if adv.len() < 2 {
        return Err(config("top-half selection needs at least two samples"));
    }
    if adv.iter().any(|a| a.is_nan()) {
        return Err(Error::Numerical("NaN advantage".into()));
    }
    let mut order: Vec<usize> = (0..adv.len()).collect();
    order.sort_by(|&i, &j| adv[j].partial_cmp(&adv[i]).unwrap());
    order.truncate(adv.len().div_ceil(2));
    order.sort_unstable();
    Ok(order)
}

fn max_of(xs: &[f64]) -> f64 {
    xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// `softmax(Â / η)` with a max shift.
pub fn vmpo_psi_weights(adv_top: &[f64], eta: f64) -> Vec<f64> {
    let m = max_of(adv_top);
    let e: Vec<f64> = adv_top.iter().map(|a| ((a - m) / eta).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// `L_η = η ε_η + η ln mean exp(Â/η)` and `dL_η/dη`.
pub fn vmpo_temperature_loss(adv_top: &[f64], eta: f64, eps_eta: f64) -> (f64, f64) {
    let n = adv_top.len() as f64;
    let m = max_of(adv_top);
    let shifted: Vec<f64> = adv_top.iter().map(|a| ((a - m) / eta).exp()).collect();
    let z: f64 = shifted.iter().sum();
    let lme = m / eta + (z / n).ln();
    let weighted: f64 = shifted.iter().zip(adv_top).map(|(w, a)| w * a).sum::<f64>() / z;
    (eta * eps_eta + eta * lme, eps_eta + lme - weighted / eta)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrustRegionLoss {
    pub loss: f64,
    /// Parameter gradient through the `sg[ν]·KL` terms only.
    pub grad: Vec<f64>,
    pub kl_mu: f64,
    pub kl_sigma: f64,
    /// `ε_μ − sg[KL_μ]`.
    pub dnu_mu: f64,
    /// `ε_σ − sg[KL_σ]`; zero for categorical policies.
    pub dnu_sigma: f64,
}

/// Decoupled trust-region loss. Gaussian policies get separate mean and
/// spread constraints; categorical policies use `ν_μ` against the full KL.
pub fn vmpo_trust_region_loss(
    policy: &Policy,
    mb: &Minibatch,
    state: &VmpoState,
    eps_nu_mu: f64,
    eps_nu_sigma: f64,
) -> Result<TrustRegionLoss> {
    let n = mb.len as f64;
    let discrete = policy.is_discrete();
    let (mut km, mut ks) = (0.0, 0.0);
    let (_, grad) = policy.loss_and_grad(&mb.obs, mb.len, |i, d| {
        let old = Dist::from_head(d, mb.head(i))?;
        if discrete {
            km += old.kl(d)?;
            let g = d.grad_kl_from(&old)?;
            Ok((0.0, g.into_iter().map(|x| state.nu_mu * x / n).collect()))
        } else {
            let (a, b) = old.kl_decoupled(d)?;
            km += a;
            ks += b;
            let (gm, gs) = d.grad_kl_decoupled_from(&old)?;
            Ok((
                0.0,
                gm.iter().zip(&gs).map(|(x, y)| (state.nu_mu * x + state.nu_sigma * y) / n).collect(),
            ))
        }
    })?;
    let (km, ks) = (km / n, ks / n);
    let dnu_mu = eps_nu_mu - km;
    let dnu_sigma = if discrete { 0.0 } else { eps_nu_sigma - ks };
    let loss = state.nu_mu * dnu_mu + state.nu_mu * km + if discrete { 0.0 } else { state.nu_sigma * dnu_sigma + state.nu_sigma * ks };
    Ok(TrustRegionLoss { loss, grad, kl_mu: km, kl_sigma: ks, dnu_mu, dnu_sigma })
}
