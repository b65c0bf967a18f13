//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero if any fails. `PGRAD_ACCEPTANCE=1,2,7` restricts the run.
//!
//! Oracles here are written independently of the library: central
//! differences, brute-force GAE sums, dense LU solves, closed-form tabular
//! values and a local value iteration.

#![allow(clippy::needless_range_loop)]

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use pgrad::algorithms::{
    a2c_loss, conjugate_gradient, fisher_vector_product, importance_weighted_value, ppo_loss, reinforce_loss,
    score_gradient_study, trpo_surrogate_loss, vmpo_policy_loss, vmpo_select_top_half, vmpo_temperature_loss,
    vmpo_trust_region_loss, Algo, PolicyGradient, VmpoState,
};
use pgrad::dist::ActionBounds;
use pgrad::envs::{grid_mdp, ActionSpace, EnvName, MdpPreset, TabularMdp};
use pgrad::harness::{kl_tracking_report, median, read_metrics, run_training, ExperimentConfig, MetricRecord, RunOutcome};
use pgrad::nn::Activation;
use pgrad::policy::Policy;
use pgrad::rollout::{gae, Minibatch};
use pgrad::tabular::{gpi_step, mirror_converge, mirror_update, Drift, Neighborhood, TabularPolicy};

// Pinned tolerances.
const FD_REL_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-6;
const GAE_TOL: f64 = 1e-10;
const SE_MULT: f64 = 3.0;
const MC_EPISODES: usize = 100_000;
const TRPO_DELTA: f64 = 0.01;
const TRPO_SLACK: f64 = 1e-9;
const CG_TOL: f64 = 1e-6;
const FVP_SYM_TOL: f64 = 1e-8;
const MIRROR_SLACK: f64 = 1e-9;
const MIRROR_GAP: f64 = 1e-6;
const MIRROR_ITERS: usize = 200;
const MIRROR_RESOLUTION: usize = 21;
const MULTIPLIER_FLOOR: f64 = 1e-8;
const PSI_SUM_TOL: f64 = 1e-12;
const KL_RATIO: f64 = 10.0;
const LEARNING_BUDGET_SECS: f64 = 30.0 * 60.0;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn out_root() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

// ---------------------------------------------------------------- helpers

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(1e-8)
}

fn central_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let up = f(&probe);
            probe[i] = orig - FD_STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Three tiny networks per action type: varied depth, width and activation.
/// Every parameter is jittered so no ReLU pre-activation sits exactly on its
/// kink, where one-sided slopes differ and central differences average them.
fn tiny_policies() -> Vec<(String, Policy)> {
    let bounds = ActionBounds::new(vec![-2.0, -1.0], vec![2.0, 1.0]).unwrap();
    let archs: [(&[usize], Activation, u64); 3] =
        [(&[5], Activation::Tanh, 1), (&[6, 4], Activation::Swish, 2), (&[4, 4, 3], Activation::Relu, 3)];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut out = Vec::new();
    for (hidden, act, seed) in archs {
        let spaces = [("categorical", ActionSpace::Discrete(3)), ("gaussian", ActionSpace::Continuous(bounds.clone()))];
        for (kind, space) in spaces {
            let mut p = Policy::new(3, hidden, act, space, seed).unwrap();
            let flat: Vec<f64> = p.flat().iter().map(|t| t + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
            p.set_flat(&flat).unwrap();
            out.push((format!("{kind}{hidden:?}"), p));
        }
    }
    out
}

/// Minibatch from a perturbed behavior copy so that ratios differ from one.
fn minibatch(policy: &Policy, n: usize, seed: u64) -> Minibatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obs: Vec<f64> = (0..n * policy.obs_dim()).map(|_| rng.sample(StandardNormal)).collect();
    let flat: Vec<f64> = policy.flat().iter().map(|t| t + 0.05 * rng.sample::<f64, _>(StandardNormal)).collect();
    let behavior = policy.with_flat(&flat).unwrap();
    let (mut raw, mut logp, mut heads) = (Vec::new(), Vec::new(), Vec::new());
    for d in behavior.dists(&obs, n).unwrap() {
        let a = d.sample(&mut rng);
        logp.push(d.log_prob(&a).unwrap());
        raw.extend(a);
        heads.extend(d.head());
    }
    Minibatch {
        len: n,
        obs,
        raw_actions: raw,
        logp,
        old_heads: heads,
        advantages: (0..n).map(|_| rng.sample(StandardNormal)).collect(),
        returns: (0..n).map(|_| rng.sample(StandardNormal)).collect(),
        values: vec![0.0; n],
    }
}

// ------------------------------------------------------------ criterion 1

fn criterion_1() -> Outcome {
    type Surrogate = Box<dyn Fn(&Policy, &Minibatch) -> PolicyGradient>;
    let weights = |n: usize| -> Vec<f64> {
        // Top half of a fixed ordering with unequal softmax-like weights.
        let raw: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { (i as f64 * 0.3).exp() } else { 0.0 }).collect();
        let z: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / z).collect()
    };
    let state = VmpoState { eta: 1.3, nu_mu: 0.8, nu_sigma: 2.0 };
    let surrogates: Vec<(&str, Surrogate)> = vec![
        ("reinforce", Box::new(|p, m| reinforce_loss(p, m).unwrap())),
        ("a2c", Box::new(|p, m| a2c_loss(p, m, 0.1).unwrap())),
        ("ppo", Box::new(|p, m| ppo_loss(p, m, 0.2, 0.0).unwrap())),
        ("trpo", Box::new(|p, m| trpo_surrogate_loss(p, m).unwrap())),
        ("vmpo_pi", Box::new(move |p, m| vmpo_policy_loss(p, m, &weights(m.len)).unwrap())),
    ];
    let mut worst: Vec<(String, f64)> = Vec::new();
    let policies = tiny_policies();
    for (name, f) in &surrogates {
        let mut w = 0.0f64;
        for (k, (_, p)) in policies.iter().enumerate() {
            let mb = minibatch(p, 7, 100 + k as u64);
            let g = f(p, &mb).grad;
            let fd = central_diff(&|th| f(&p.with_flat(th).unwrap(), &mb).loss, &p.flat());
            w = w.max(rel_err(&g, &fd));
        }
        worst.push((name.to_string(), w));
    }
    // L_nu: parameter gradient flows through sg[nu] * KL only.
    let mut w = 0.0f64;
    for (k, (_, p)) in policies.iter().enumerate() {
        let mb = minibatch(p, 7, 200 + k as u64);
        let g = vmpo_trust_region_loss(p, &mb, &state, 0.01, 5e-5).unwrap().grad;
        let fd = central_diff(
            &|th| {
                let t = vmpo_trust_region_loss(&p.with_flat(th).unwrap(), &mb, &state, 0.01, 5e-5).unwrap();
                state.nu_mu * t.kl_mu + state.nu_sigma * t.kl_sigma
            },
            &p.flat(),
        );
        w = w.max(rel_err(&g, &fd));
    }
    worst.push(("vmpo_nu".into(), w));
    // L_eta in eta on three advantage sets.
    let mut w = 0.0f64;
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let adv: Vec<f64> = (0..9).map(|_| rng.sample::<f64, _>(StandardNormal) * 2.0).collect();
        for eta in [0.3, 1.0, 4.0] {
            let (_, d) = vmpo_temperature_loss(&adv, eta, 0.01);
            let fd = central_diff(&|e| vmpo_temperature_loss(&adv, e[0], 0.01).0, &[eta]);
            w = w.max(rel_err(&[d], &fd));
        }
    }
    worst.push(("vmpo_eta".into(), w));
    let passed = worst.iter().all(|(_, e)| *e <= FD_REL_TOL);
    let detail = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    outcome(passed, format!("max relative error per surrogate over {} nets: {detail}", policies.len()))
}

// ------------------------------------------------------------ criterion 2

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = [0.0f64; 4];
    for trial in 0..50 {
        let n = 1 + trial % 17;
        let r: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let v: Vec<f64> = (0..=n).map(|_| rng.sample(StandardNormal)).collect();
        let mut term: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.15).collect();
        let no_trunc = vec![false; n];
        let boot = vec![0.0; n];
        let gamma = 0.9 + 0.09 * rng.random::<f64>();
        let lambda = rng.random::<f64>();
        let next_v = |t: usize, term: &[bool], v: &[f64]| if term[t] { 0.0 } else { v[t + 1] };
        let delta: Vec<f64> = (0..n).map(|t| r[t] + gamma * next_v(t, &term, &v) - v[t]).collect();

        // lambda = 0: the TD residual.
        let (a0, _) = gae(&r, &v, &term, &no_trunc, &boot, gamma, 0.0).unwrap();
        worst[0] = worst[0].max(a0.iter().zip(&delta).map(|(a, d)| (a - d).abs()).fold(0.0, f64::max));

        // lambda = 1: discounted rewards to the segment end plus bootstrap.
        let (a1, _) = gae(&r, &v, &term, &no_trunc, &boot, gamma, 1.0).unwrap();
        for t in 0..n {
            let (mut g, mut disc, mut k) = (0.0, 1.0, t);
            loop {
                g += disc * r[k];
                disc *= gamma;
                if term[k] {
                    break;
                }
                if k + 1 == n {
                    g += disc * v[n];
                    break;
                }
                k += 1;
            }
            worst[1] = worst[1].max((a1[t] - (g - v[t])).abs());
        }

        // General lambda: explicit sum of (gamma lambda)^l delta_{t+l}.
        let (al, _) = gae(&r, &v, &term, &no_trunc, &boot, gamma, lambda).unwrap();
        for t in 0..n {
            let (mut s, mut w) = (0.0, 1.0);
            for k in t..n {
                s += w * delta[k];
                if term[k] {
                    break;
                }
                w *= gamma * lambda;
            }
            worst[2] = worst[2].max((al[t] - s).abs());
        }

        // gamma = lambda = 1, V = 0, episode ends at the last step: MC returns.
        term[n - 1] = true;
        let zeros = vec![0.0; n + 1];
        let (amc, _) = gae(&r, &zeros, &term, &no_trunc, &boot, 1.0, 1.0).unwrap();
        for t in 0..n {
            let mut g = 0.0;
            for k in t..n {
                g += r[k];
                if term[k] {
                    break;
                }
            }
            worst[3] = worst[3].max((amc[t] - g).abs());
        }
    }
    outcome(
        worst.iter().all(|&e| e <= GAE_TOL),
        format!(
            "max abs error: lambda=0 {:.1e}, lambda=1 {:.1e}, general {:.1e}, MC {:.1e}",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

// --------------------------------------------------------- criteria 3, 4

/// `V(s0)` of the two-state MDP: stay pays 1, exit pays 2 and terminates.
fn two_state_value(p_stay: f64) -> f64 {
    (p_stay + 2.0 * (1.0 - p_stay)) / (1.0 - 0.9 * p_stay)
}

fn criterion_3() -> Outcome {
    let mdp = grid_mdp(MdpPreset::TwoState);
    let logits: [f64; 4] = [0.4, -0.2, 0.0, 0.0];
    let p_stay = 1.0 / (1.0 + (logits[1] - logits[0]).exp());
    let baseline = [two_state_value(p_stay), 0.0];
    // Exact gradient: differentiate the closed form through the softmax.
    let j = |l: &[f64]| two_state_value(1.0 / (1.0 + (l[1] - l[0]).exp()));
    let mut exact = central_diff(&j, &logits[..2]);
    exact.extend([0.0, 0.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let study = score_gradient_study(&mdp, &logits, &baseline, MC_EPISODES, &mut rng).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for k in 0..4 {
        let (p, b, d) = (&study.plain[k], &study.baseline[k], &study.difference[k]);
        let unbiased = (b.mean - p.mean).abs() <= SE_MULT * d.std_err() + 1e-12
            && (p.mean - exact[k]).abs() <= SE_MULT * p.std_err() + 1e-12
            && (b.mean - exact[k]).abs() <= SE_MULT * b.std_err() + 1e-12;
        let reduced = b.var <= p.var;
        ok &= unbiased && reduced;
        parts.push(format!("θ{k}: exact {:.4} plain {:.4} base {:.4} var {:.3}->{:.3}", exact[k], p.mean, b.mean, p.var, b.var));
    }
    outcome(ok, parts.join("; "))
}

fn criterion_4() -> Outcome {
    let mdp = grid_mdp(MdpPreset::TwoState);
    let target = TabularPolicy::new(vec![vec![0.7, 0.3], vec![0.5, 0.5]]).unwrap();
    let behavior = TabularPolicy::new(vec![vec![0.45, 0.55], vec![0.5, 0.5]]).unwrap();
    let exact = two_state_value(0.7);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let est = importance_weighted_value(&mdp, &behavior, &target, MC_EPISODES, &mut rng).unwrap();
    let z = (est.mean - exact).abs() / est.std_err();
    outcome(
        z <= SE_MULT,
        format!("estimate {:.5} vs exact {exact:.5}: {z:.2} standard errors (SE {:.1e})", est.mean, est.std_err()),
    )
}

// ------------------------------------------------------------ criterion 5

fn criterion_5() -> Outcome {
    let mut cfg = ExperimentConfig::defaults(Algo::Trpo, EnvName::CartPole);
    cfg.total_steps = 196_608;
    cfg.seeds = vec![0];
    cfg.out_dir = out_root().join("c5");
    let out = run_training(&cfg, 0).unwrap();
    let kl = kl_tracking_report(&out.log, Algo::Trpo).unwrap();
    let recs = read_metrics(&out.log).unwrap();
    let accepted: Vec<f64> = kl.iter().zip(&recs).filter(|(_, r)| r.rejected_update == Some(false)).map(|(k, _)| *k).collect();
    let max = accepted.iter().copied().fold(0.0, f64::max);
    let bad = accepted.iter().filter(|&&k| k > TRPO_DELTA + TRPO_SLACK).count();
    let best = out.best_eval().unwrap_or(f64::NAN);
    outcome(
        !accepted.is_empty() && bad == 0,
        format!(
            "{} updates, {} accepted, max exact KL {max:.5}, violations {bad}; best eval {best:.1}",
            recs.len(),
            accepted.len()
        ),
    )
}

// ------------------------------------------------------------ criterion 6

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut cg_err = 0.0f64;
    for k in 0..20 {
        let n = 1 + k % 20;
        let m = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let a = &m * m.transpose() + DMatrix::identity(n, n) * 0.5;
        let b = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = conjugate_gradient(|v| Ok((&a * DVector::from_column_slice(v)).as_slice().to_vec()), b.as_slice(), 4 * n, 1e-20)
            .unwrap();
        let direct = a.clone().lu().solve(&b).unwrap();
        cg_err = cg_err.max((DVector::from_vec(x) - direct).amax());
    }
    let mut sym = 0.0f64;
    for (k, (_, p)) in tiny_policies().iter().enumerate() {
        let mb = minibatch(p, 9, 600 + k as u64);
        let u: Vec<f64> = (0..p.num_params()).map(|_| rng.sample(StandardNormal)).collect();
        let v: Vec<f64> = (0..p.num_params()).map(|_| rng.sample(StandardNormal)).collect();
        let hu = fisher_vector_product(p, &mb, &u, 0.1).unwrap();
        let hv = fisher_vector_product(p, &mb, &v, 0.1).unwrap();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        sym = sym.max((dot(&u, &hv) - dot(&v, &hu)).abs());
    }
    outcome(
        cg_err <= CG_TOL && sym <= FVP_SYM_TOL,
        format!("CG vs LU max abs error {cg_err:.1e} on 20 SPD systems; FVP asymmetry {sym:.1e}"),
    )
}

// --------------------------------------------------------- criteria 7, 8

/// Optimal `J` by plain value iteration.
fn oracle_optimum(mdp: &TabularMdp) -> f64 {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut v = vec![0.0; ns];
    for _ in 0..10_000 {
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            if mdp.terminal[s] {
                continue;
            }
            next[s] = (0..na)
                .map(|a| {
                    (0..ns)
                        .map(|s2| {
                            let i = (s * na + a) * ns + s2;
                            mdp.p[i] * (mdp.r[i] + mdp.gamma * v[s2])
                        })
                        .sum::<f64>()
                })
                .fold(f64::NEG_INFINITY, f64::max);
        }
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if delta < 1e-15 {
            break;
        }
    }
    mdp.p0.iter().zip(&v).map(|(p, x)| p * x).sum()
}

fn criterion_7() -> Outcome {
    let mdp = grid_mdp(MdpPreset::Gridworld4x4);
    let optimum = oracle_optimum(&mdp);
    let pi0 = TabularPolicy::uniform(mdp.n_states, mdp.n_actions);
    let cases = [
        ("trivial", Drift::Trivial, Neighborhood::Trivial),
        ("ppo eps=0.2", Drift::Ppo { epsilon: 0.2 }, Neighborhood::Trivial),
        ("kl ball delta=0.01", Drift::Trivial, Neighborhood::KlBall { delta: 0.01 }),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, drift, nbhd) in cases {
        let trace = mirror_converge(&mdp, &pi0, &drift, &nbhd, MIRROR_ITERS, MIRROR_RESOLUTION).unwrap();
        let mut prev = trace.j0;
        let mut monotone = true;
        for s in &trace.steps {
            monotone &= s.j >= prev - MIRROR_SLACK && s.j - prev >= s.bound - MIRROR_SLACK;
            prev = s.j;
        }
        let reached = trace.steps.iter().position(|s| (optimum - s.j).abs() <= MIRROR_GAP).map(|i| i + 1);
        ok &= monotone && reached.is_some();
        parts.push(format!(
            "{name}: monotone {monotone}, within {MIRROR_GAP:.0e} at iter {}",
            reached.map_or("never".into(), |i| i.to_string())
        ));
    }
    outcome(ok, format!("optimum {optimum:.6}; {}", parts.join("; ")))
}

fn random_mdp(rng: &mut ChaCha8Rng) -> TabularMdp {
    let ns = rng.random_range(2..7);
    let na = rng.random_range(2..5);
    let mut p = vec![0.0; ns * na * ns];
    let mut r = vec![0.0; ns * na * ns];
    for sa in 0..ns * na {
        let w: Vec<f64> = (0..ns).map(|_| if rng.random::<f64>() < 0.3 { 0.0 } else { rng.random::<f64>() }).collect();
        let z: f64 = w.iter().sum::<f64>();
        for s2 in 0..ns {
            p[sa * ns + s2] = if z > 0.0 { w[s2] / z } else { 1.0 / ns as f64 };
            // Small integer rewards make exact Q ties common.
            r[sa * ns + s2] = rng.random_range(-1..=1) as f64;
        }
    }
    let mut p0 = vec![0.0; ns];
    p0[rng.random_range(0..ns)] = 1.0;
    TabularMdp::new(ns, na, p, r, p0, 0.8, vec![false; ns]).unwrap()
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut equal = 0;
    for k in 0..25 {
        let mdp = random_mdp(&mut rng);
        let pi = if k % 5 == 0 {
            TabularPolicy::uniform(mdp.n_states, mdp.n_actions)
        } else {
            let rows = (0..mdp.n_states)
                .map(|_| {
                    let w: Vec<f64> = (0..mdp.n_actions).map(|_| rng.random::<f64>() + 0.01).collect();
                    let z: f64 = w.iter().sum();
                    w.into_iter().map(|x| x / z).collect()
                })
                .collect();
            TabularPolicy::new(rows).unwrap()
        };
        let m = mirror_update(&mdp, &pi, &Drift::Trivial, &Neighborhood::Trivial, MIRROR_RESOLUTION).unwrap();
        let g = gpi_step(&mdp, &pi).unwrap();
        equal += (m == g) as usize;
    }
    outcome(equal == 25, format!("{equal}/25 random MDPs give identical policies"))
}

// --------------------------------------------------------- criteria 9, 10

struct LearningRuns {
    ppo_cartpole: Vec<RunOutcome>,
    a2c_cartpole: Vec<RunOutcome>,
    secs: f64,
}

fn best_within(records: &[MetricRecord], steps: u64) -> f64 {
    records.iter().filter(|r| r.step <= steps).filter_map(|r| r.eval_mean_return).fold(f64::NEG_INFINITY, f64::max)
}

fn learning_cfg(algo: Algo, env: EnvName, total: u64, stop: Option<f64>, dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::defaults(algo, env);
    cfg.total_steps = total;
    cfg.eval_every = 16_384;
    cfg.stop_at_return = stop;
    cfg.out_dir = dir.to_path_buf();
    cfg
}

fn criterion_9(runs: &mut Option<LearningRuns>) -> Outcome {
    let start = Instant::now();
    let dir = out_root().join("c9");
    let mut parts = Vec::new();
    let mut ok = true;

    let cfg = learning_cfg(Algo::Ppo, EnvName::CartPole, 300_000, Some(400.0), &dir);
    let ppo_cp: Vec<RunOutcome> = [0, 1, 2].iter().map(|&s| run_training(&cfg, s).unwrap()).collect();
    let hits = ppo_cp.iter().filter(|o| best_within(&o.records, 300_000) >= 400.0).count();
    ok &= hits == 3;
    parts.push(format!(
        "PPO cartpole {hits}/3 >= 400 (best {})",
        ppo_cp.iter().map(|o| format!("{:.0}", best_within(&o.records, 300_000))).collect::<Vec<_>>().join("/")
    ));

    let cfg = learning_cfg(Algo::Ppo, EnvName::Pendulum, 500_000, Some(-300.0), &dir);
    let mut pend = Vec::new();
    for s in [0, 1, 2] {
        let o = run_training(&cfg, s).unwrap();
        pend.push(best_within(&o.records, 500_000));
        // Two successes already decide the criterion.
        if pend.iter().filter(|&&b| b >= -300.0).count() >= 2 {
            break;
        }
    }
    let hits = pend.iter().filter(|&&b| b >= -300.0).count();
    ok &= hits >= 2;
    parts.push(format!(
        "PPO pendulum {hits}/3 >= -300 (best {})",
        pend.iter().map(|b| format!("{b:.0}")).collect::<Vec<_>>().join("/")
    ));

    let cfg = learning_cfg(Algo::A2c, EnvName::CartPole, 500_000, Some(300.0), &dir);
    let a2c: Vec<RunOutcome> = vec![run_training(&cfg, 0).unwrap()];
    let best = best_within(&a2c[0].records, 500_000);
    ok &= best >= 300.0;
    parts.push(format!("A2C cartpole best {best:.0} (>= 300)"));

    let mut cfg = learning_cfg(Algo::Reinforce, EnvName::CartPole, 300_000, None, &dir);
    cfg.eval_every = 4096;
    let rf = run_training(&cfg, 0).unwrap();
    let evals: Vec<f64> = rf.records.iter().filter_map(|r| r.eval_mean_return).collect();
    let first = evals.iter().take(10).sum::<f64>() / 10.0;
    let last = evals.iter().rev().take(10).sum::<f64>() / 10.0;
    let improved = evals.len() >= 20 && last >= 1.5 * first;
    ok &= improved;
    parts.push(format!("REINFORCE mean of first 10 evals {first:.1}, last 10 {last:.1} ({} evals)", evals.len()));

    let secs = start.elapsed().as_secs_f64();
    ok &= secs < LEARNING_BUDGET_SECS;
    parts.push(format!("{secs:.0}s"));
    *runs = Some(LearningRuns { ppo_cartpole: ppo_cp, a2c_cartpole: a2c, secs });
    outcome(ok, parts.join("; "))
}

fn criterion_10(runs: &mut Option<LearningRuns>) -> Outcome {
    if runs.is_none() {
        let dir = out_root().join("c10");
        let ppo = learning_cfg(Algo::Ppo, EnvName::CartPole, 163_840, None, &dir);
        let a2c = learning_cfg(Algo::A2c, EnvName::CartPole, 163_840, None, &dir);
        *runs = Some(LearningRuns {
            ppo_cartpole: vec![run_training(&ppo, 0).unwrap()],
            a2c_cartpole: vec![run_training(&a2c, 0).unwrap()],
            secs: 0.0,
        });
    }
    let r = runs.as_ref().unwrap();
    let series = |outs: &[RunOutcome], algo| -> Vec<f64> {
        outs.iter().flat_map(|o| kl_tracking_report(&o.log, algo).unwrap()).collect()
    };
    let ppo = series(&r.ppo_cartpole, Algo::Ppo);
    let a2c = series(&r.a2c_cartpole, Algo::A2c);
    let (mp, ma) = (median(&ppo).unwrap_or(f64::NAN), median(&a2c).unwrap_or(f64::NAN));
    outcome(
        ma * KL_RATIO <= mp,
        format!(
            "median approx KL: A2C {ma:.2e} over {} updates, PPO {mp:.2e} over {} updates, ratio {:.1}",
            a2c.len(),
            ppo.len(),
            mp / ma
        ),
    )
}

// ------------------------------------------------------------ criterion 11

fn criterion_11() -> Outcome {
    let dir = out_root().join("c11");
    let mut floor_ok = true;
    let mut psi_max = 0.0f64;
    let mut min_mult = f64::INFINITY;
    let mut updates = 0;
    for (env, steps) in [(EnvName::CartPole, 81_920), (EnvName::Pendulum, 65_536)] {
        let cfg = learning_cfg(Algo::Vmpo, env, steps, None, &dir);
        let out = run_training(&cfg, 0).unwrap();
        for r in &out.records {
            let m = [r.eta, r.nu_mu, r.nu_sigma].map(|x| x.unwrap_or(f64::NAN));
            floor_ok &= m.iter().all(|&x| x >= MULTIPLIER_FLOOR);
            min_mult = m.iter().copied().fold(min_mult, f64::min);
            psi_max = psi_max.max(r.psi_weight_error.unwrap_or(f64::INFINITY));
            updates += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut mismatch = 0;
    for _ in 0..1000 {
        let n = rng.random_range(2..64);
        // Coarse values so that ties are frequent.
        let adv: Vec<f64> = (0..n).map(|_| rng.random_range(-4..=4) as f64 * 0.25).collect();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&i, &j| adv[j].partial_cmp(&adv[i]).unwrap().then(i.cmp(&j)));
        let mut want = idx[..n.div_ceil(2)].to_vec();
        want.sort_unstable();
        mismatch += (vmpo_select_top_half(&adv).unwrap() != want) as usize;
    }
    outcome(
        floor_ok && psi_max <= PSI_SUM_TOL && mismatch == 0 && updates > 0,
        format!(
            "{updates} updates: min multiplier {min_mult:.2e}, max |sum psi - 1| {psi_max:.1e}; top-half mismatches {mismatch}/1000"
        ),
    )
}

// ------------------------------------------------------------ criterion 12

fn criterion_12() -> Outcome {
    let mut same = Vec::new();
    for algo in Algo::ALL {
        for env in [EnvName::CartPole, EnvName::Pendulum] {
            let mut logs = Vec::new();
            for rep in 0..2 {
                let mut cfg = ExperimentConfig::defaults(algo, env);
                cfg.algo.unroll = 256;
                cfg.algo.num_envs = if algo == Algo::Reinforce { 1 } else { 4 };
                cfg.value_hidden = vec![64, 64];
                cfg.total_steps = 2048;
                cfg.eval_every = 1024;
                cfg.eval_episodes = 2;
                cfg.out_dir = out_root().join(format!("c12/rep{rep}"));
                let out = run_training(&cfg, 12).unwrap();
                logs.push(std::fs::read(&out.log).unwrap());
            }
            same.push((format!("{algo}/{}", env.as_str()), !logs[0].is_empty() && logs[0] == logs[1]));
        }
    }
    let bad: Vec<&str> = same.iter().filter(|(_, s)| !s).map(|(n, _)| n.as_str()).collect();
    outcome(
        bad.is_empty(),
        if bad.is_empty() {
            format!("{} algorithm/env pairs byte-identical across repeat runs", same.len())
        } else {
            format!("differing logs: {}", bad.join(", "))
        },
    )
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("PGRAD_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    // Cargo passes test-harness flags such as `--list`; nothing to list here.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut runs = None;
    let mut failed = 0;
    for id in 1..=12usize {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t = Instant::now();
        let o = match id {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(),
            5 => criterion_5(),
            6 => criterion_6(),
            7 => criterion_7(),
            8 => criterion_8(),
            9 => criterion_9(&mut runs),
            10 => criterion_10(&mut runs),
            11 => criterion_11(),
            _ => criterion_12(),
        };
        failed += !o.passed as usize;
        println!(
            "{} criterion {id:>2} ({:.1}s): {}",
            if o.passed { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            o.detail
        );
    }
    if let Some(r) = &runs {
        println!("learning runs took {:.0}s", r.secs);
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
