//! Monte-Carlo estimators on tabular MDPs: off-policy evaluation with
//! importance ratios and score-function gradients with an optional baseline.

use rand::Rng;

use crate::dist::{log_softmax, softmax};
use crate::envs::TabularMdp;
use crate::error::{config, contract, Error, Result};
use crate::tabular::TabularPolicy;

/// Episodes longer than this are treated as non-terminating.
pub const MAX_EPISODE_STEPS: usize = 100_000;

/// Sample mean and variance with the standard error of the mean.
#[derive(Clone, Debug, PartialEq)]
pub struct McStats {
    pub n: usize,
    pub mean: f64,
    pub var: f64,
}

impl McStats {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self { n, mean, var }
    }

    pub fn std_err(&self) -> f64 {
        (self.var / self.n as f64).sqrt()
    }
}

fn sample_action<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (a, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return a;
        }
    }
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}

/// Per-episode samples of `ρ_{0:T−1} G_0` with actions drawn from
/// `behavior`; their mean estimates `V_target` under the start distribution.
pub fn importance_weighted_samples<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    behavior: &TabularPolicy,
    target: &TabularPolicy,
    episodes: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    for pi in [behavior, target] {
        if pi.n_states != mdp.n_states || pi.n_actions != mdp.n_actions {
            return Err(contract("policy shape does not match the MDP"));
        }
    }
    if episodes == 0 {
        return Err(config("need at least one episode"));
    }
    let uncovered = behavior.flat().iter().zip(target.flat()).any(|(&b, &t)| t > 0.0 && b <= 0.0);
    if uncovered {
        return Err(contract("behavior policy must cover every action the target takes"));
    }
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut s = mdp.sample_start(rng);
        let (mut rho, mut ret, mut disc) = (1.0, 0.0, 1.0);
        let mut steps = 0;
        while !mdp.terminal[s] {
            let a = sample_action(behavior.row(s), rng);
            let b = behavior.prob(s, a);
            if b <= 0.0 {
                return Err(contract("behavior probability of a taken action is zero"));
            }
            rho *= target.prob(s, a) / b;
            let (next, r) = mdp.sample_step(s, a, rng)?;
            ret += disc * r;
            disc *= mdp.gamma;
            s = next;
            steps += 1;
            if steps > MAX_EPISODE_STEPS {
                return Err(Error::Numerical("episode did not terminate".into()));
            }
        }
        out.push(rho * ret);
    }
    Ok(out)
}

pub fn importance_weighted_value<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    behavior: &TabularPolicy,
    target: &TabularPolicy,
    episodes: usize,
    rng: &mut R,
) -> Result<McStats> {
    let samples = importance_weighted_samples(mdp, behavior, target, episodes, rng)?;
    Ok(McStats::from_samples(&samples))
}

/// Tabular softmax policy from state-major logits.
pub fn softmax_policy(logits: &[f64], n_states: usize, n_actions: usize) -> Result<TabularPolicy> {
    if logits.len() != n_states * n_actions {
        return Err(contract("logit table has the wrong size"));
    }
    let probs: Vec<f64> = logits
        .chunks_exact(n_actions)
        .flat_map(|row| {
            let mut p = softmax(row);
            let s: f64 = p.iter().sum();
            p.iter_mut().for_each(|x| *x /= s);
            p
        })
        .collect();
    TabularPolicy::from_flat(n_states, n_actions, probs)
}

/// Per-coordinate statistics of episodic score-function gradient estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientStudy {
    pub plain: Vec<McStats>,
    pub baseline: Vec<McStats>,
    /// Paired difference `baseline − plain`, per coordinate.
    pub difference: Vec<McStats>,
}

/// Samples episodes from a tabular softmax policy and forms, per episode,
/// `Σ_t γ^t (G_t − b(s_t)) ∇ ln π(a_t|s_t)` both with `b ≡ 0` and with the
/// given baseline.
pub fn score_gradient_study<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    logits: &[f64],
    baseline: &[f64],
    episodes: usize,
    rng: &mut R,
) -> Result<GradientStudy> {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    if baseline.len() != ns {
        return Err(contract("baseline has the wrong size"));
    }
    let pi = softmax_policy(logits, ns, na)?;
    let dim = ns * na;
    let mut plain = vec![Vec::with_capacity(episodes); dim];
    let mut based = vec![Vec::with_capacity(episodes); dim];
    for _ in 0..episodes {
        let mut s = mdp.sample_start(rng);
        let mut traj = Vec::new();
        while !mdp.terminal[s] {
            let a = sample_action(pi.row(s), rng);
            let (next, r) = mdp.sample_step(s, a, rng)?;
            traj.push((s, a, r));
            s = next;
            if traj.len() > MAX_EPISODE_STEPS {
                return Err(Error::Numerical("episode did not terminate".into()));
            }
        }
        let mut g_plain = vec![0.0; dim];
        let mut g_base = vec![0.0; dim];
        let mut ret = 0.0;
        for (t, &(s, a, r)) in traj.iter().enumerate().rev() {
            ret = r + mdp.gamma * ret;
            let disc = mdp.gamma.powi(t as i32);
            let lp = log_softmax(&logits[s * na..(s + 1) * na]);
            for b in 0..na {
                let score = (a == b) as u8 as f64 - lp[b].exp();
                g_plain[s * na + b] += disc * ret * score;
                g_base[s * na + b] += disc * (ret - baseline[s]) * score;
            }
        }
        for k in 0..dim {
            plain[k].push(g_plain[k]);
            based[k].push(g_base[k]);
        }
    }
    let difference: Vec<McStats> = (0..dim)
        .map(|k| {
            let d: Vec<f64> = based[k].iter().zip(&plain[k]).map(|(a, b)| a - b).collect();
            McStats::from_samples(&d)
        })
        .collect();
    Ok(GradientStudy {
        plain: plain.iter().map(|x| McStats::from_samples(x)).collect(),
        baseline: based.iter().map(|x| McStats::from_samples(x)).collect(),
        difference,
    })
}

/// Exact gradient of `J = E_{p0}[V]` with respect to the tabular softmax
/// logits: `Σ_s η(s) π(a|s) A(s, a)` with discounted visitation `η`.
pub fn exact_softmax_gradient(mdp: &TabularMdp, logits: &[f64]) -> Result<Vec<f64>> {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let pi = softmax_policy(logits, ns, na)?;
    let (v, q) = crate::tabular::policy_eval_exact(mdp, &pi)?;
    let eta = crate::tabular::visitation(mdp, &pi)?;
    let mut g = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            g[s * na + a] = eta[s] * pi.prob(s, a) * (q[s * na + a] - v[s]);
        }
    }
    Ok(g)
}
