//! Exact finite-MDP solvers and the mirror-learning update.
//!
//! `mirror_update` maximizes, state by state,
//!
//! ```text
//! E_{A~π̄}[Q_old(s, A)] − D_old(π̄ | s)
//! ```
//!
//! with the sampling weight equal to the occupancy of the old policy, so the
//! drift enters with unit scale. The argmax is a direct search over the
//! simplex vertices, the old policy and a regular simplex grid. Results are
//! therefore exact only up to the grid spacing. The KL-ball neighborhood with
//! no drift is solved through its Lagrangian instead of the grid.
//!
//! REINFORCE and A2C are only approximately instances of this update (they
//! take expectations under the new policy), which the idealized update here
//! does not model.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::envs::TabularMdp;
use crate::error::{config, contract, Error, Result};

/// Candidate values must beat the incumbent by this much to replace it.
pub const TIE_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct TabularPolicy {
    pub n_states: usize,
    pub n_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_states = rows.len();
        let n_actions = rows.first().map_or(0, |r| r.len());
        if n_states == 0 || n_actions == 0 || rows.iter().any(|r| r.len() != n_actions) {
            return Err(config("policy table must be a non-empty rectangle"));
        }
        let probs: Vec<f64> = rows.concat();
        Self::from_flat(n_states, n_actions, probs)
    }

    pub fn from_flat(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(config("policy table has the wrong size"));
        }
        for row in probs.chunks_exact(n_actions) {
            if row.iter().any(|&p| !(p >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(config("policy row is not a probability distribution"));
            }
        }
        Ok(Self { n_states, n_actions, probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(config("action index out of range"));
            }
            probs[s * n_actions + a] = 1.0;
        }
        Ok(Self { n_states: actions.len(), n_actions, probs })
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn flat(&self) -> &[f64] {
        &self.probs
    }

    fn check(&self, mdp: &TabularMdp) -> Result<()> {
        if self.n_states != mdp.n_states || self.n_actions != mdp.n_actions {
            return Err(contract("policy shape does not match the MDP"));
        }
        Ok(())
    }
}

/// Solves the Bellman equations for `pi` directly. Returns `V` and `Q`
/// (state-major, `n_actions` wide). Terminal states have value 0.
pub fn policy_eval_exact(mdp: &TabularMdp, pi: &TabularPolicy) -> Result<(Vec<f64>, Vec<f64>)> {
    pi.check(mdp)?;
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut a = DMatrix::<f64>::identity(ns, ns);
    let mut b = DVector::<f64>::zeros(ns);
    for s in 0..ns {
        if mdp.terminal[s] {
            continue;
        }
        for act in 0..na {
            let p = pi.prob(s, act);
            if p == 0.0 {
                continue;
            }
            b[s] += p * mdp.expected_reward(s, act);
            for (s2, t) in mdp.transition_row(s, act).iter().enumerate() {
                if !mdp.terminal[s2] {
                    a[(s, s2)] -= mdp.gamma * p * t;
                }
            }
        }
    }
    let lu = a.clone().lu();
    let v = lu
        .solve(&b)
        .filter(|v| v.iter().all(|x| x.is_finite()))
        .ok_or_else(|| Error::Numerical("Bellman system is singular".into()))?;
    let resid = (&a * &v - &b).amax();
    if !(resid <= 1e-8 * (1.0 + b.amax())) {
        return Err(Error::Numerical("Bellman system is singular".into()));
    }
    let v: Vec<f64> = v.iter().copied().collect();
    Ok((v.clone(), q_from_v(mdp, &v)))
}

/// One-step backup `Q(s,a) = Σ P (R + γ V(s'))`.
pub fn q_from_v(mdp: &TabularMdp, v: &[f64]) -> Vec<f64> {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut q = vec![0.0; ns * na];
    for s in 0..ns {
        if mdp.terminal[s] {
            continue;
        }
        for a in 0..na {
            let base = mdp.idx(s, a, 0);
            q[s * na + a] = (0..ns)
                .map(|s2| {
                    let next = if mdp.terminal[s2] { 0.0 } else { v[s2] };
                    mdp.p[base + s2] * (mdp.r[base + s2] + mdp.gamma * next)
                })
                .sum();
        }
    }
    q
}

/// Lowest-index argmax where later entries must win by more than [`TIE_TOL`].
pub fn argmax_first(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] + TIE_TOL {
            best = i;
        }
    }
    best
}

pub fn greedy(q: &[f64], n_states: usize, n_actions: usize) -> TabularPolicy {
    let actions: Vec<usize> = q.chunks_exact(n_actions).map(argmax_first).collect();
    debug_assert_eq!(actions.len(), n_states);
    TabularPolicy::deterministic(n_actions, &actions).expect("argmax is in range")
}

/// Optimal values (max-backup iterated to a 1e-12 change) and a greedy policy.
pub fn value_iteration(mdp: &TabularMdp) -> Result<(Vec<f64>, TabularPolicy)> {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut v = vec![0.0; ns];
    for _ in 0..1_000_000 {
        let q = q_from_v(mdp, &v);
        let next: Vec<f64> = q
            .chunks_exact(na)
            .zip(&mdp.terminal)
            .map(|(row, &t)| if t { 0.0 } else { row.iter().cloned().fold(f64::NEG_INFINITY, f64::max) })
            .collect();
        let diff = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if !diff.is_finite() {
            return Err(Error::Numerical("value iteration diverged".into()));
        }
        if diff < 1e-12 {
            let q = q_from_v(mdp, &v);
            return Ok((v, greedy(&q, ns, na)));
        }
    }
    Err(Error::Numerical("value iteration did not converge".into()))
}

/// Greedy improvement against `Q_pi`.
pub fn gpi_step(mdp: &TabularMdp, pi: &TabularPolicy) -> Result<TabularPolicy> {
    let (_, q) = policy_eval_exact(mdp, pi)?;
    Ok(greedy(&q, mdp.n_states, mdp.n_actions))
}

/// `E_{p0}[V_pi]`.
pub fn expected_return(mdp: &TabularMdp, pi: &TabularPolicy) -> Result<f64> {
    let (v, _) = policy_eval_exact(mdp, pi)?;
    Ok(mdp.p0.iter().zip(&v).map(|(p, v)| p * v).sum())
}

/// Discounted visitation counts `η = p0 + γ P_πᵀ η` over non-terminal states
/// (terminal entries are 0).
pub fn visitation(mdp: &TabularMdp, pi: &TabularPolicy) -> Result<Vec<f64>> {
    pi.check(mdp)?;
    let ns = mdp.n_states;
    let mut a = DMatrix::<f64>::identity(ns, ns);
    let mut b = DVector::<f64>::zeros(ns);
    for s2 in 0..ns {
        if mdp.terminal[s2] {
            continue;
        }
        b[s2] = mdp.p0[s2];
        for s in 0..ns {
            if mdp.terminal[s] {
                continue;
            }
            let flow: f64 = (0..mdp.n_actions)
                .map(|act| pi.prob(s, act) * mdp.p[mdp.idx(s, act, s2)])
                .sum();
            a[(s2, s)] -= mdp.gamma * flow;
        }
    }
    let eta = a
        .lu()
        .solve(&b)
        .filter(|v| v.iter().all(|x| x.is_finite()))
        .ok_or_else(|| Error::Numerical("visitation system is singular".into()))?;
    Ok(eta.iter().copied().collect())
}

/// Normalized discounted visitation distribution `d^π`.
pub fn occupancy(mdp: &TabularMdp, pi: &TabularPolicy) -> Result<Vec<f64>> {
    let eta = visitation(mdp, pi)?;
    let total: f64 = eta.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Numerical("policy never visits a non-terminal state".into()));
    }
    Ok(eta.into_iter().map(|x| x / total).collect())
}

fn clip(r: f64, eps: f64) -> f64 {
    r.clamp(1.0 - eps, 1.0 + eps)
}

/// PPO drift at one state: `E_{a~π_old}[max(0, (r − clip(r)) A(a))]` with
/// `A = Q − V`. Every old action probability must be positive.
pub fn ppo_drift(pi_old: &[f64], pi_cand: &[f64], q: &[f64], epsilon: f64) -> Result<f64> {
    if pi_old.len() != pi_cand.len() || q.len() != pi_old.len() {
        return Err(contract("drift inputs differ in length"));
    }
    if pi_old.iter().any(|&p| p <= 0.0) {
        return Err(contract("PPO drift needs full-support behavior probabilities"));
    }
    Ok(ppo_drift_extended(pi_old, pi_cand, q, epsilon))
}

/// [`ppo_drift`] multiplied through by `π_old(a)`, which stays defined when
/// an old probability is zero.
fn ppo_drift_extended(pi_old: &[f64], pi_cand: &[f64], q: &[f64], epsilon: f64) -> f64 {
    let v: f64 = pi_old.iter().zip(q).map(|(p, q)| p * q).sum();
    let mut total = 0.0;
    for a in 0..pi_old.len() {
        let adv = q[a] - v;
        let clipped = if pi_old[a] > 0.0 {
            pi_old[a] * clip(pi_cand[a] / pi_old[a], epsilon)
        } else {
            0.0
        };
        total += ((pi_cand[a] - clipped) * adv).max(0.0);
    }
    total
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Drift {
    /// No penalty; with the trivial neighborhood this is greedy improvement.
    Trivial,
    Ppo { epsilon: f64 },
    /// `scale · Σ_a (π̄(a) − π_old(a))²`.
    Squared { scale: f64 },
}

impl Drift {
    pub fn name(&self) -> String {
        match self {
            Drift::Trivial => "trivial".into(),
            Drift::Ppo { epsilon } => format!("ppo(eps={epsilon})"),
            Drift::Squared { scale } => format!("squared(scale={scale})"),
        }
    }

    pub fn eval(&self, pi_old: &[f64], pi_cand: &[f64], q: &[f64]) -> f64 {
        match *self {
            Drift::Trivial => 0.0,
            Drift::Ppo { epsilon } => ppo_drift_extended(pi_old, pi_cand, q, epsilon),
            Drift::Squared { scale } => {
                scale * pi_old.iter().zip(pi_cand).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Neighborhood {
    Trivial,
    /// Occupancy-weighted mean `KL(π_old ‖ π̄)` at most `delta`.
    KlBall { delta: f64 },
}

impl Neighborhood {
    pub fn name(&self) -> String {
        match self {
            Neighborhood::Trivial => "trivial".into(),
            Neighborhood::KlBall { delta } => format!("kl_ball(delta={delta})"),
        }
    }

    pub fn contains(&self, pi_old: &TabularPolicy, cand: &TabularPolicy, d: &[f64]) -> bool {
        match *self {
            Neighborhood::Trivial => true,
            Neighborhood::KlBall { delta } => mean_kl(pi_old, cand, d) <= delta + 1e-12,
        }
    }
}

/// `KL(p ‖ q)` for probability rows; infinite when `q` drops support of `p`.
pub fn kl_rows(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b <= 0.0 {
                return f64::INFINITY;
            }
            total += a * (a / b).ln();
        }
    }
    total.max(0.0)
}

pub fn mean_kl(p: &TabularPolicy, q: &TabularPolicy, d: &[f64]) -> f64 {
    (0..p.n_states)
        .filter(|&s| d[s] > 0.0)
        .map(|s| d[s] * kl_rows(p.row(s), q.row(s)))
        .sum()
}

/// Simplex vertices, then `pi_old`, then the regular grid with spacing
/// `1 / (resolution − 1)`.
fn candidates(pi_old: &[f64], resolution: usize) -> Vec<Vec<f64>> {
    let n = pi_old.len();
    let mut out: Vec<Vec<f64>> = (0..n)
        .map(|a| {
            let mut v = vec![0.0; n];
            v[a] = 1.0;
            v
        })
        .collect();
    out.push(pi_old.to_vec());
    let k = resolution - 1;
    let mut counts = vec![0usize; n];
    fn rec(i: usize, left: usize, k: usize, counts: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        let n = counts.len();
        if i == n - 1 {
            counts[i] = left;
            out.push(counts.iter().map(|&c| c as f64 / k as f64).collect());
            return;
        }
        for c in (0..=left).rev() {
            counts[i] = c;
            rec(i + 1, left - c, k, counts, out);
        }
    }
    rec(0, k, k, &mut counts, &mut out);
    out
}

fn score(row: &[f64], q: &[f64]) -> f64 {
    row.iter().zip(q).map(|(p, q)| p * q).sum()
}

/// Per-state direct search for `argmax E_π̄[Q] − D − λ·KL`.
fn search_state(pi_old: &[f64], q: &[f64], drift: &Drift, cands: &[Vec<f64>], kl_weight: f64) -> (Vec<f64>, f64) {
    let mut best = pi_old.to_vec();
    let mut best_val = f64::NEG_INFINITY;
    for c in cands {
        let mut val = score(c, q) - drift.eval(pi_old, c, q);
        if kl_weight > 0.0 {
            val -= kl_weight * kl_rows(pi_old, c);
        }
        if val > best_val + TIE_TOL || best_val == f64::NEG_INFINITY {
            best_val = val;
            best = c.clone();
        }
    }
    (best, best_val)
}

/// Maximizer of `E_q[Q] − λ KL(p ‖ q)`: `q(a) = λ p(a) / (μ − Q(a))`, with
/// `μ` chosen so `q` sums to one.
fn kl_tilt(p: &[f64], q: &[f64], lambda: f64) -> Vec<f64> {
    let support: Vec<usize> = (0..p.len()).filter(|&a| p[a] > 0.0).collect();
    let qmax = support.iter().map(|&a| q[a]).fold(f64::NEG_INFINITY, f64::max);
    let total = |mu: f64| support.iter().map(|&a| lambda * p[a] / (mu - q[a])).sum::<f64>();
    let (mut lo, mut hi) = (qmax, qmax + lambda);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if total(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut out = vec![0.0; p.len()];
    for &a in &support {
        out[a] = lambda * p[a] / (hi - q[a]);
    }
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= s);
    out
}

/// One mirror-learning step. Occupancy-weighted objective, unit drift scale.
pub fn mirror_update(
    mdp: &TabularMdp,
    pi_old: &TabularPolicy,
    drift: &Drift,
    nbhd: &Neighborhood,
    resolution: usize,
) -> Result<TabularPolicy> {
    if resolution < 2 {
        return Err(config("grid resolution must be at least 2"));
    }
    pi_old.check(mdp)?;
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let (_, q) = policy_eval_exact(mdp, pi_old)?;
    let q_row = |s: usize| &q[s * na..(s + 1) * na];

    let delta = match *nbhd {
        Neighborhood::Trivial => {
            let mut rows = Vec::with_capacity(ns * na);
            for s in 0..ns {
                let cands = candidates(pi_old.row(s), resolution);
                rows.extend(search_state(pi_old.row(s), q_row(s), drift, &cands, 0.0).0);
            }
            return TabularPolicy::from_flat(ns, na, rows);
        }
        Neighborhood::KlBall { delta } => delta,
    };

    // Average-KL ball: bisect the multiplier λ of the constraint.
    let d = occupancy(mdp, pi_old)?;
    let active: Vec<usize> = (0..ns).filter(|&s| d[s] > 0.0 && !mdp.terminal[s]).collect();
    let cand_sets: Vec<Vec<Vec<f64>>> = match drift {
        Drift::Trivial => Vec::new(),
        _ => (0..ns).map(|s| candidates(pi_old.row(s), resolution)).collect(),
    };
    let solve = |lambda: f64| -> TabularPolicy {
        let mut rows = pi_old.flat().to_vec();
        for &s in &active {
            let row = match drift {
                Drift::Trivial => kl_tilt(pi_old.row(s), q_row(s), lambda),
                _ => search_state(pi_old.row(s), q_row(s), drift, &cand_sets[s], lambda).0,
            };
            rows[s * na..(s + 1) * na].copy_from_slice(&row);
        }
        TabularPolicy { n_states: ns, n_actions: na, probs: rows }
    };
    let within = |pi: &TabularPolicy| mean_kl(pi_old, pi, &d) <= delta;

    let mut lo = 1e-12;
    let lo_pol = solve(lo);
    if within(&lo_pol) {
        return Ok(lo_pol);
    }
    let mut hi = 1.0;
    while !within(&solve(hi)) {
        hi *= 2.0;
        if hi > 1e300 {
            return Ok(pi_old.clone());
        }
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if !(mid > lo && mid < hi) {
            break;
        }
        if within(&solve(mid)) {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi / lo < 1.0 + 1e-13 {
            break;
        }
    }
    let pi = solve(hi);
    // The search only moves towards higher Q, but keep the old policy if
    // rounding ever made the objective worse.
    let gain: f64 = active
        .iter()
        .map(|&s| d[s] * (score(pi.row(s), q_row(s)) - drift.eval(pi_old.row(s), pi.row(s), q_row(s)) - score(pi_old.row(s), q_row(s))))
        .sum();
    Ok(if gain >= 0.0 { pi } else { pi_old.clone() })
}

/// Mirror objective of `cand` relative to `pi_old`, occupancy-weighted.
pub fn mirror_objective(mdp: &TabularMdp, pi_old: &TabularPolicy, cand: &TabularPolicy, drift: &Drift) -> Result<f64> {
    let (_, q) = policy_eval_exact(mdp, pi_old)?;
    let d = occupancy(mdp, pi_old)?;
    let na = mdp.n_actions;
    Ok((0..mdp.n_states)
        .map(|s| {
            let qs = &q[s * na..(s + 1) * na];
            d[s] * (score(cand.row(s), qs) - drift.eval(pi_old.row(s), cand.row(s), qs))
        })
        .sum())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MirrorStep {
    pub iter: usize,
    /// `J` of the policy after this step.
    pub j: f64,
    pub improvement: f64,
    /// `E_{p0}[D_old(π_new | s)]`.
    pub bound: f64,
    pub satisfied: bool,
    pub gap_to_optimum: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MirrorTrace {
    pub drift: String,
    pub neighborhood: String,
    pub resolution: usize,
    pub j0: f64,
    pub optimum: f64,
    pub steps: Vec<MirrorStep>,
    pub final_policy: TabularPolicy,
}

impl MirrorTrace {
    pub fn final_j(&self) -> f64 {
        self.steps.last().map_or(self.j0, |s| s.j)
    }

    /// First violated improvement step, as a property violation.
    pub fn verify(&self) -> Result<()> {
        match self.steps.iter().find(|s| !s.satisfied) {
            None => Ok(()),
            Some(s) => Err(Error::Property(format!(
                "iteration {}: improvement {:.3e} below drift bound {:.3e}",
                s.iter, s.improvement, s.bound
            ))),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for s in &self.steps {
            out.serialize(s)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Iterates [`mirror_update`] and records `J` with the drift bound. The
/// improvement check uses a slack of 1e-9 for grid and rounding effects.
pub fn mirror_converge(
    mdp: &TabularMdp,
    pi0: &TabularPolicy,
    drift: &Drift,
    nbhd: &Neighborhood,
    iters: usize,
    resolution: usize,
) -> Result<MirrorTrace> {
    let (v_star, _) = value_iteration(mdp)?;
    let optimum: f64 = mdp.p0.iter().zip(&v_star).map(|(p, v)| p * v).sum();
    let j0 = expected_return(mdp, pi0)?;
    let mut pi = pi0.clone();
    let mut j = j0;
    let mut steps = Vec::with_capacity(iters);
    let na = mdp.n_actions;
    for iter in 0..iters {
        let (_, q) = policy_eval_exact(mdp, &pi)?;
        let next = mirror_update(mdp, &pi, drift, nbhd, resolution)?;
        let bound: f64 = (0..mdp.n_states)
            .map(|s| mdp.p0[s] * drift.eval(pi.row(s), next.row(s), &q[s * na..(s + 1) * na]))
            .sum();
        let j_next = expected_return(mdp, &next)?;
        let improvement = j_next - j;
        steps.push(MirrorStep {
            iter: iter + 1,
            j: j_next,
            improvement,
            bound,
            satisfied: improvement >= bound - 1e-9,
            gap_to_optimum: optimum - j_next,
        });
        pi = next;
        j = j_next;
    }
    Ok(MirrorTrace {
        drift: drift.name(),
        neighborhood: nbhd.name(),
        resolution,
        j0,
        optimum,
        steps,
        final_policy: pi,
    })
}
