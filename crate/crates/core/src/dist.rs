//! Categorical and diagonal-Gaussian action distributions.
//!
//! A distribution is described by its *head parameters*: the logits for a
//! categorical, or `mean ++ log_std` for a diagonal Gaussian. Gradient helpers
//! return derivatives with respect to that same layout so the policy can chain
//! them into the network.
//!
//! Log-probabilities are taken on the raw (pre-squash) action. No tanh
//! Jacobian correction is applied; squashing is treated as part of the
//! environment.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{config, contract, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Debug, PartialEq)]
pub enum Dist {
    Categorical { logits: Vec<f64> },
    Gaussian { mean: Vec<f64>, log_std: Vec<f64> },
}

/// Box bounds for continuous actions.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionBounds {
    low: Vec<f64>,
    high: Vec<f64>,
}

impl ActionBounds {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        if low.len() != high.len() || low.is_empty() {
            return Err(config("action bounds need matching, non-empty low and high"));
        }
        if low.iter().zip(&high).any(|(l, h)| !(l < h)) {
            return Err(config("action bounds need low < high"));
        }
        Ok(Self { low, high })
    }

    pub fn low(&self) -> &[f64] {
        &self.low
    }

    pub fn high(&self) -> &[f64] {
        &self.high
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }
}

/// Maps an unbounded raw action into the box via `tanh`.
pub fn squash(raw: &[f64], bounds: &ActionBounds) -> Result<Vec<f64>> {
    if raw.len() != bounds.dim() {
        return Err(contract("raw action dimension does not match bounds"));
    }
    Ok(raw
        .iter()
        .zip(bounds.low.iter().zip(&bounds.high))
        .map(|(&r, (&lo, &hi))| lo + (hi - lo) * (r.tanh() + 1.0) * 0.5)
        .collect())
}

/// Unbiased single-sample KL estimate `r − 1 − ln r`, `r = exp(logp_new − logp_old)`.
pub fn kl_estimate(logp_old: f64, logp_new: f64) -> f64 {
    let x = logp_new - logp_old;
    (x.exp_m1() - x).max(0.0)
}

/// `log softmax(logits)`.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

impl Dist {
    pub fn categorical(logits: Vec<f64>) -> Result<Self> {
        if logits.is_empty() || logits.iter().any(|z| !z.is_finite()) {
            return Err(contract("categorical logits must be finite and non-empty"));
        }
        Ok(Dist::Categorical { logits })
    }

    pub fn gaussian(mean: Vec<f64>, log_std: Vec<f64>) -> Result<Self> {
        if mean.is_empty() || mean.len() != log_std.len() {
            return Err(contract("gaussian mean and log_std must match and be non-empty"));
        }
        if mean.iter().chain(&log_std).any(|v| !v.is_finite()) {
            return Err(contract("gaussian parameters must be finite"));
        }
        Ok(Dist::Gaussian { mean, log_std })
    }

    /// Builds a distribution of the same family from a head-parameter slice.
    pub fn from_head(template: &Dist, head: &[f64]) -> Result<Self> {
        match template {
            Dist::Categorical { logits } => {
                if head.len() != logits.len() {
                    return Err(contract("head length does not match categorical size"));
                }
                Dist::categorical(head.to_vec())
            }
            Dist::Gaussian { mean, .. } => {
                let d = mean.len();
                if head.len() != 2 * d {
                    return Err(contract("head length does not match gaussian size"));
                }
                Dist::gaussian(head[..d].to_vec(), head[d..].to_vec())
            }
        }
    }

    pub fn head(&self) -> Vec<f64> {
        match self {
            Dist::Categorical { logits } => logits.clone(),
            Dist::Gaussian { mean, log_std } => mean.iter().chain(log_std).cloned().collect(),
        }
    }

    pub fn num_head_params(&self) -> usize {
        match self {
            Dist::Categorical { logits } => logits.len(),
            Dist::Gaussian { mean, .. } => 2 * mean.len(),
        }
    }

    /// Number of scalars in a raw action (1 for a categorical index).
    pub fn action_dim(&self) -> usize {
        match self {
            Dist::Categorical { .. } => 1,
            Dist::Gaussian { mean, .. } => mean.len(),
        }
    }

    pub fn probs(&self) -> Option<Vec<f64>> {
        match self {
            Dist::Categorical { logits } => Some(softmax(logits)),
            Dist::Gaussian { .. } => None,
        }
    }

    fn same_family(&self, other: &Dist) -> Result<()> {
        match (self, other) {
            (Dist::Categorical { logits: a }, Dist::Categorical { logits: b }) if a.len() == b.len() => {
                Ok(())
            }
            (Dist::Gaussian { mean: a, .. }, Dist::Gaussian { mean: b, .. }) if a.len() == b.len() => {
                Ok(())
            }
            _ => Err(contract("distributions differ in family or dimension")),
        }
    }

    fn category(action: &[f64], n: usize) -> Result<usize> {
        match action {
            [a] if *a >= 0.0 && a.fract() == 0.0 && (*a as usize) < n => Ok(*a as usize),
            _ => Err(contract(format!("invalid categorical action {action:?} for {n} actions"))),
        }
    }

    pub fn log_prob(&self, action: &[f64]) -> Result<f64> {
        match self {
            Dist::Categorical { logits } => {
                let i = Self::category(action, logits.len())?;
                Ok(log_softmax(logits)[i])
            }
            Dist::Gaussian { mean, log_std } => {
                if action.len() != mean.len() {
                    return Err(contract("gaussian action dimension mismatch"));
                }
                Ok(action
                    .iter()
                    .zip(mean.iter().zip(log_std))
                    .map(|(&a, (&mu, &ls))| {
                        let z = (a - mu) * (-ls).exp();
                        -ls - HALF_LN_2PI - 0.5 * z * z
                    })
                    .sum())
            }
        }
    }

    pub fn entropy(&self) -> f64 {
        match self {
            Dist::Categorical { logits } => {
                let lp = log_softmax(logits);
                -lp.iter().map(|&l| l.exp() * l).sum::<f64>()
            }
            Dist::Gaussian { log_std, .. } => log_std.iter().map(|ls| 0.5 + HALF_LN_2PI + ls).sum(),
        }
    }

    /// `KL(self ‖ other)`.
    pub fn kl(&self, other: &Dist) -> Result<f64> {
        self.same_family(other)?;
        Ok(match (self, other) {
            (Dist::Categorical { logits: p }, Dist::Categorical { logits: q }) => {
                let lp = log_softmax(p);
                let lq = log_softmax(q);
                lp.iter().zip(&lq).map(|(a, b)| a.exp() * (a - b)).sum::<f64>().max(0.0)
            }
            (
                Dist::Gaussian { mean: mp, log_std: sp },
                Dist::Gaussian { mean: mq, log_std: sq },
            ) => (0..mp.len())
                .map(|i| {
                    let ratio = (2.0 * (sp[i] - sq[i])).exp();
                    let dm = mp[i] - mq[i];
                    sq[i] - sp[i] + 0.5 * (ratio + dm * dm * (-2.0 * sq[i]).exp()) - 0.5
                })
                .sum::<f64>()
                .max(0.0),
            _ => unreachable!(),
        })
    }

    /// Mean and spread parts of the Gaussian KL: the first keeps the spread at
    /// `self`'s value, the second keeps the mean fixed.
    pub fn kl_decoupled(&self, other: &Dist) -> Result<(f64, f64)> {
        self.same_family(other)?;
        match (self, other) {
            (
                Dist::Gaussian { mean: mp, log_std: sp },
                Dist::Gaussian { mean: mq, log_std: sq },
            ) => {
                let mut kl_mean = 0.0;
                let mut kl_std = 0.0;
                for i in 0..mp.len() {
                    let dm = mp[i] - mq[i];
                    kl_mean += 0.5 * dm * dm * (-2.0 * sp[i]).exp();
                    kl_std += sq[i] - sp[i] + 0.5 * (2.0 * (sp[i] - sq[i])).exp() - 0.5;
                }
                Ok((kl_mean, kl_std.max(0.0)))
            }
            _ => Err(contract("decoupled KL is defined for gaussians only")),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Dist::Categorical { logits } => {
                let p = softmax(logits);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (i, pi) in p.iter().enumerate() {
                    acc += pi;
                    if u < acc {
                        return vec![i as f64];
                    }
                }
                // Rounding left `acc` a hair under 1; fall back to the last
                // action that has mass.
                let last = p.iter().rposition(|&x| x > 0.0).unwrap_or(p.len() - 1);
                vec![last as f64]
            }
            Dist::Gaussian { mean, log_std } => mean
                .iter()
                .zip(log_std)
                .map(|(&mu, &ls)| {
                    let z: f64 = rng.sample(StandardNormal);
                    mu + ls.exp() * z
                })
                .collect(),
        }
    }

    /// Most likely action; ties go to the lowest index.
    pub fn mode(&self) -> Vec<f64> {
        match self {
            Dist::Categorical { logits } => {
                let mut best = 0;
                for (i, z) in logits.iter().enumerate() {
                    if *z > logits[best] {
                        best = i;
                    }
                }
                vec![best as f64]
            }
            Dist::Gaussian { mean, .. } => mean.clone(),
        }
    }

    /// `∂ log π(a) / ∂ head`.
    pub fn grad_log_prob(&self, action: &[f64]) -> Result<Vec<f64>> {
        match self {
            Dist::Categorical { logits } => {
                let i = Self::category(action, logits.len())?;
                let mut g: Vec<f64> = softmax(logits).into_iter().map(|p| -p).collect();
                g[i] += 1.0;
                Ok(g)
            }
            Dist::Gaussian { mean, log_std } => {
                if action.len() != mean.len() {
                    return Err(contract("gaussian action dimension mismatch"));
                }
                let d = mean.len();
                let mut g = vec![0.0; 2 * d];
                for i in 0..d {
                    let inv_var = (-2.0 * log_std[i]).exp();
                    let diff = action[i] - mean[i];
                    g[i] = diff * inv_var;
                    g[d + i] = diff * diff * inv_var - 1.0;
                }
                Ok(g)
            }
        }
    }

    /// `∂ H / ∂ head`.
    pub fn grad_entropy(&self) -> Vec<f64> {
        match self {
            Dist::Categorical { logits } => {
                let lp = log_softmax(logits);
                let h = -lp.iter().map(|&l| l.exp() * l).sum::<f64>();
                lp.iter().map(|&l| -l.exp() * (l + h)).collect()
            }
            Dist::Gaussian { mean, .. } => {
                let d = mean.len();
                let mut g = vec![0.0; 2 * d];
                g[d..].iter_mut().for_each(|x| *x = 1.0);
                g
            }
        }
    }

    /// `∂ KL(old ‖ self) / ∂ head` of `self`.
    pub fn grad_kl_from(&self, old: &Dist) -> Result<Vec<f64>> {
        self.same_family(old)?;
        Ok(match (old, self) {
            (Dist::Categorical { logits: p }, Dist::Categorical { logits: q }) => softmax(q)
                .into_iter()
                .zip(softmax(p))
                .map(|(pq, pp)| pq - pp)
                .collect(),
            (
                Dist::Gaussian { mean: mp, log_std: sp },
                Dist::Gaussian { mean: mq, log_std: sq },
            ) => {
                let d = mp.len();
                let mut g = vec![0.0; 2 * d];
                for i in 0..d {
                    let inv_var_q = (-2.0 * sq[i]).exp();
                    let dm = mq[i] - mp[i];
                    g[i] = dm * inv_var_q;
                    g[d + i] = 1.0 - ((2.0 * sp[i]).exp() + dm * dm) * inv_var_q;
                }
                g
            }
            _ => unreachable!(),
        })
    }

    /// Gradients of the two decoupled parts `(KL_mean(old ‖ self), KL_std(old ‖ self))`
    /// with respect to `self`'s head.
    pub fn grad_kl_decoupled_from(&self, old: &Dist) -> Result<(Vec<f64>, Vec<f64>)> {
        self.same_family(old)?;
        match (old, self) {
            (
                Dist::Gaussian { mean: mp, log_std: sp },
                Dist::Gaussian { mean: mq, log_std: sq },
            ) => {
                let d = mp.len();
                let mut gm = vec![0.0; 2 * d];
                let mut gs = vec![0.0; 2 * d];
                for i in 0..d {
                    gm[i] = (mq[i] - mp[i]) * (-2.0 * sp[i]).exp();
                    gs[d + i] = 1.0 - (2.0 * (sp[i] - sq[i])).exp();
                }
                Ok((gm, gs))
            }
            _ => Err(contract("decoupled KL is defined for gaussians only")),
        }
    }

    /// Product of the Fisher matrix (Hessian of `KL(self ‖ ·)` at `self`) with
    /// a head-space vector.
    pub fn fisher_vector(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.num_head_params() {
            return Err(contract("fisher vector length mismatch"));
        }
        Ok(match self {
            Dist::Categorical { logits } => {
                let p = softmax(logits);
                let pv: f64 = p.iter().zip(v).map(|(a, b)| a * b).sum();
                p.iter().zip(v).map(|(pi, vi)| pi * (vi - pv)).collect()
            }
            Dist::Gaussian { mean, log_std } => {
                let d = mean.len();
                let mut out = vec![0.0; 2 * d];
                for i in 0..d {
                    out[i] = v[i] * (-2.0 * log_std[i]).exp();
                    out[d + i] = 2.0 * v[d + i];
                }
                out
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::num_grad;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gauss(m: &[f64], s: &[f64]) -> Dist {
        Dist::gaussian(m.to_vec(), s.to_vec()).unwrap()
    }

    #[test]
    fn uniform_categorical() {
        let d = Dist::categorical(vec![0.0; 4]).unwrap();
        for a in 0..4 {
            assert!((d.log_prob(&[a as f64]).unwrap() - 0.25f64.ln()).abs() < 1e-15);
        }
        assert!((d.entropy() - 4f64.ln()).abs() < 1e-15);
        assert!(d.log_prob(&[4.0]).is_err());
        assert!(d.log_prob(&[1.5]).is_err());
    }

    #[test]
    fn gaussian_point_values() {
        let d = gauss(&[0.3], &[0.0]);
        assert!((d.log_prob(&[0.3]).unwrap() + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
        assert!((d.entropy() - 1.418_938_533_204_672_7).abs() < 1e-12);
        assert!((gauss(&[0.0], &[0.0]).kl(&gauss(&[1.0], &[0.0])).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gaussian_density_integrates_to_one() {
        let d = gauss(&[0.4], &[-0.3]);
        let (lo, hi, n) = (-12.0, 12.0, 200_000);
        let h = (hi - lo) / n as f64;
        // Simpson's rule.
        let mut total = 0.0;
        for i in 0..=n {
            let x = lo + i as f64 * h;
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            total += w * d.log_prob(&[x]).unwrap().exp();
        }
        assert!((total * h / 3.0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn entropy_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for d in [gauss(&[0.2, -1.0], &[0.1, -0.5]), Dist::categorical(vec![0.5, -1.0, 2.0]).unwrap()] {
            let n = 100_000;
            let xs: Vec<f64> = (0..n).map(|_| -d.log_prob(&d.sample(&mut rng)).unwrap()).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            assert!((mean - d.entropy()).abs() < 3.0 * se, "{mean} vs {}", d.entropy());
        }
    }

    #[test]
    fn categorical_kl_matches_direct_sum() {
        let p = [0.1, 1.0, -0.5, 0.3];
        let q = [1.0, -0.2, 0.0, 0.7];
        let (pp, qq) = (softmax(&p), softmax(&q));
        let direct: f64 = pp.iter().zip(&qq).map(|(a, b)| a * (a / b).ln()).sum();
        let kl = Dist::categorical(p.to_vec()).unwrap().kl(&Dist::categorical(q.to_vec()).unwrap()).unwrap();
        assert!((kl - direct).abs() < 1e-12);
    }

    #[test]
    fn kl_family_mismatch() {
        let c = Dist::categorical(vec![0.0, 0.0]).unwrap();
        assert!(c.kl(&gauss(&[0.0], &[0.0])).is_err());
        assert!(c.kl(&Dist::categorical(vec![0.0; 3]).unwrap()).is_err());
        assert!(c.kl_decoupled(&c).is_err());
    }

    #[test]
    fn decoupled_examples() {
        let p = gauss(&[0.1, 0.2], &[0.3, -0.4]);
        assert_eq!(p.kl_decoupled(&p).unwrap(), (0.0, 0.0));
        let q = gauss(&[1.0, -0.2], &[0.3, -0.4]);
        let (m, s) = p.kl_decoupled(&q).unwrap();
        assert!(s.abs() < 1e-15 && (m - p.kl(&q).unwrap()).abs() < 1e-14);
        let r = gauss(&[0.1, 0.2], &[0.0, 0.5]);
        let (m, s) = p.kl_decoupled(&r).unwrap();
        assert!(m == 0.0 && (s - p.kl(&r).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn kl_estimate_values() {
        assert_eq!(kl_estimate(-1.3, -1.3), 0.0);
        assert!((kl_estimate(0.0, 2f64.ln()) - (1.0 - 2f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn kl_estimate_is_unbiased() {
        let old = gauss(&[0.0, 0.5], &[0.0, -0.2]);
        let new = gauss(&[0.1, 0.45], &[0.05, -0.25]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| {
                let a = old.sample(&mut rng);
                kl_estimate(old.log_prob(&a).unwrap(), new.log_prob(&a).unwrap())
            })
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - old.kl(&new).unwrap()).abs() < 3.0 * se);
    }

    #[test]
    fn sampling_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = gauss(&[1.5], &[-20.0]);
        assert!((d.sample(&mut rng)[0] - 1.5).abs() < 1e-7);

        let c = Dist::categorical(vec![100.0, 0.0, 0.0]).unwrap();
        let hits = (0..10_000).filter(|_| c.sample(&mut rng)[0] == 0.0).count();
        assert!(hits as f64 / 1e4 > 0.999);

        let g = gauss(&[0.7], &[0.2]);
        let n = 100_000;
        let mean = (0..n).map(|_| g.sample(&mut rng)[0]).sum::<f64>() / n as f64;
        assert!((mean - 0.7).abs() < 3.0 * 0.2f64.exp() / (n as f64).sqrt());

        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(g.sample(&mut a), g.sample(&mut b));
    }

    #[test]
    fn modes() {
        assert_eq!(Dist::categorical(vec![1.0, 3.0, 2.0]).unwrap().mode(), vec![1.0]);
        assert_eq!(Dist::categorical(vec![2.0, 2.0]).unwrap().mode(), vec![0.0]);
        assert_eq!(gauss(&[0.3, -0.1], &[1.0, 1.0]).mode(), vec![0.3, -0.1]);
    }

    #[test]
    fn squash_examples() {
        let b = ActionBounds::new(vec![-2.0], vec![2.0]).unwrap();
        assert_eq!(squash(&[0.0], &b).unwrap(), vec![0.0]);
        assert!((squash(&[50.0], &b).unwrap()[0] - 2.0).abs() < 1e-9);
        assert!(ActionBounds::new(vec![1.0], vec![1.0]).is_err());
    }

    fn check_head_grad(d: &Dist, analytic: &[f64], f: impl Fn(&Dist) -> f64) {
        let fd = num_grad(|h| Ok(f(&Dist::from_head(d, h)?)), &d.head(), 1e-6).unwrap();
        for (a, b) in analytic.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-4 * a.abs().max(b.abs()).max(1e-3), "{a} vs {b}");
        }
    }

    #[test]
    fn head_gradients_match_finite_differences() {
        let dists = [Dist::categorical(vec![0.3, -1.0, 0.8]).unwrap(), gauss(&[0.2, -0.4], &[0.1, -0.3])];
        let olds = [Dist::categorical(vec![0.0, 0.5, -0.5]).unwrap(), gauss(&[0.5, 0.0], &[-0.2, 0.2])];
        for (d, old) in dists.iter().zip(&olds) {
            check_head_grad(d, &d.grad_entropy(), |x| x.entropy());
            check_head_grad(d, &d.grad_kl_from(old).unwrap(), |x| old.kl(x).unwrap());
        }
        let g = &dists[1];
        let old = &olds[1];
        let (gm, gs) = g.grad_kl_decoupled_from(old).unwrap();
        check_head_grad(g, &gm, |x| old.kl_decoupled(x).unwrap().0);
        check_head_grad(g, &gs, |x| old.kl_decoupled(x).unwrap().1);
    }

    #[test]
    fn fisher_matches_kl_hessian() {
        for d in [Dist::categorical(vec![0.3, -1.0, 0.8]).unwrap(), gauss(&[0.2, -0.4], &[0.1, -0.3])] {
            let n = d.num_head_params();
            for j in 0..n {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                let col = d.fisher_vector(&e).unwrap();
                // Column j of the Hessian is the derivative of the KL gradient.
                let fd = num_grad(
                    |h| {
                        let x = Dist::from_head(&d, h)?;
                        Ok(x.grad_kl_from(&d)?[j])
                    },
                    &d.head(),
                    1e-6,
                )
                .unwrap();
                for (a, b) in col.iter().zip(&fd) {
                    assert!((a - b).abs() < 1e-6);
                }
            }
        }
    }

    fn arb_gauss(d: usize) -> impl Strategy<Value = Dist> {
        (prop::collection::vec(-3.0f64..3.0, d), prop::collection::vec(-2.0f64..1.0, d))
            .prop_map(|(m, s)| Dist::gaussian(m, s).unwrap())
    }

    fn arb_cat(n: usize) -> impl Strategy<Value = Dist> {
        prop::collection::vec(-5.0f64..5.0, n).prop_map(|z| Dist::categorical(z).unwrap())
    }

    proptest! {
        #[test]
        fn kl_nonnegative_and_zero_on_self(p in arb_gauss(3), q in arb_gauss(3), c in arb_cat(4), e in arb_cat(4)) {
            prop_assert!(p.kl(&q).unwrap() >= 0.0);
            prop_assert!(c.kl(&e).unwrap() >= 0.0);
            prop_assert!(p.kl(&p).unwrap().abs() < 1e-14);
            prop_assert!(c.kl(&c).unwrap().abs() < 1e-14);
        }

        #[test]
        fn kl_positive_when_different(p in arb_gauss(2), shift in 0.05f64..1.0) {
            let Dist::Gaussian { mean, log_std } = &p else { unreachable!() };
            let q = Dist::gaussian(mean.iter().map(|m| m + shift).collect(), log_std.clone()).unwrap();
            prop_assert!(p.kl(&q).unwrap() > 0.0);
        }

        #[test]
        fn kl_estimate_nonnegative(a in -50.0f64..50.0, b in -50.0f64..50.0) {
            prop_assert!(kl_estimate(a, b) >= 0.0);
        }

        #[test]
        fn categorical_normalized(c in arb_cat(6)) {
            let total: f64 = (0..6).map(|a| c.log_prob(&[a as f64]).unwrap().exp()).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn log_prob_gradient(c in arb_cat(4), g in arb_gauss(2), a in 0usize..4, x in prop::collection::vec(-3.0f64..3.0, 2)) {
            for (d, act) in [(c, vec![a as f64]), (g, x)] {
                let analytic = d.grad_log_prob(&act).unwrap();
                let fd = num_grad(|h| Dist::from_head(&d, h)?.log_prob(&act), &d.head(), 1e-6).unwrap();
                for (u, v) in analytic.iter().zip(&fd) {
                    prop_assert!((u - v).abs() <= 1e-4 * u.abs().max(v.abs()).max(1e-3));
                }
            }
        }

        #[test]
        fn decoupled_parts_relate_to_full_kl(p in arb_gauss(3), q in arb_gauss(3)) {
            let (m, s) = p.kl_decoupled(&q).unwrap();
            let kl = p.kl(&q).unwrap();
            // The mean part is measured with p's spread; the full KL measures
            // the mean shift with q's spread.
            let (Dist::Gaussian { mean: mp, .. }, Dist::Gaussian { mean: mq, log_std: sq }) = (&p, &q) else { unreachable!() };
            let mean_at_q: f64 = (0..3).map(|i| 0.5 * (mp[i] - mq[i]).powi(2) * (-2.0 * sq[i]).exp()).sum();
            prop_assert!((kl - (s + mean_at_q)).abs() <= 1e-10 * kl.max(1.0));
            prop_assert!(m >= 0.0 && s >= 0.0);
        }

        #[test]
        fn decoupled_sum_exact_with_shared_spread(p in arb_gauss(3), dm in prop::collection::vec(-1.0f64..1.0, 3)) {
            let Dist::Gaussian { mean, log_std } = &p else { unreachable!() };
            let q = Dist::gaussian(mean.iter().zip(&dm).map(|(a, b)| a + b).collect(), log_std.clone()).unwrap();
            let (m, s) = p.kl_decoupled(&q).unwrap();
            prop_assert!((m + s - p.kl(&q).unwrap()).abs() < 1e-10);
        }

        #[test]
        fn squash_monotone_and_bounded(r1 in -20.0f64..20.0, r2 in -20.0f64..20.0) {
            let b = ActionBounds::new(vec![-2.0], vec![3.0]).unwrap();
            let (s1, s2) = (squash(&[r1], &b).unwrap()[0], squash(&[r2], &b).unwrap()[0]);
            prop_assert!((-2.0..=3.0).contains(&s1));
            if r1 < r2 { prop_assert!(s1 <= s2); }
        }
    }
}
