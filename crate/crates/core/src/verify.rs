//! Quick self-checks behind `pgrad verify`: finite-difference gradients of
//! every surrogate, GAE identities, CG against a dense solve, Fisher
//! symmetry, top-half selection and the tabular mirror update.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::algorithms::{
    a2c_loss, conjugate_gradient, fisher_vector_product, ppo_loss, reinforce_loss, trpo_surrogate_loss,
    vmpo_policy_loss, vmpo_select_top_half, vmpo_temperature_loss, vmpo_trust_region_loss, PolicyGradient, VmpoState,
};
use crate::dist::ActionBounds;
use crate::envs::{grid_mdp, ActionSpace, MdpPreset, TabularMdp};
use crate::error::Result;
use crate::nn::{num_grad, Activation};
use crate::policy::Policy;
use crate::rollout::{gae, mc_returns, Minibatch};
use crate::tabular::{gpi_step, mirror_converge, mirror_update, Drift, Neighborhood, TabularPolicy};

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, value: f64, tol: f64) -> Check {
    Check {
        name: name.into(),
        passed: value <= tol,
        detail: format!("{value:.3e} (tolerance {tol:.0e})"),
    }
}

fn failed(name: &str, e: crate::Error) -> Check {
    Check {
        name: name.into(),
        passed: false,
        detail: e.to_string(),
    }
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-6);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

fn tiny_policy(discrete: bool, seed: u64) -> Result<Policy> {
    let space = if discrete {
        ActionSpace::Discrete(3)
    } else {
        ActionSpace::Continuous(ActionBounds::new(vec![-1.0, -2.0], vec![1.0, 2.0])?)
    };
    Policy::new(3, &[5, 4], Activation::Tanh, space, seed)
}

fn tiny_batch(policy: &Policy, n: usize, seed: u64) -> Result<Minibatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obs: Vec<f64> = (0..n * policy.obs_dim()).map(|_| rng.sample(StandardNormal)).collect();
    let flat: Vec<f64> = policy.flat().iter().map(|t| t + 0.05 * rng.sample::<f64, _>(StandardNormal)).collect();
    let behavior = policy.with_flat(&flat)?;
    let (mut raw, mut logp, mut heads) = (Vec::new(), Vec::new(), Vec::new());
    for d in behavior.dists(&obs, n)? {
        let a = d.sample(&mut rng);
        logp.push(d.log_prob(&a)?);
        raw.extend(a);
        heads.extend(d.head());
    }
    Ok(Minibatch {
        len: n,
        obs,
        raw_actions: raw,
        logp,
        old_heads: heads,
        advantages: (0..n).map(|_| rng.sample(StandardNormal)).collect(),
        returns: (0..n).map(|_| rng.sample(StandardNormal)).collect(),
        values: vec![0.0; n],
    })
}

fn gradient_checks() -> Result<Vec<Check>> {
    type Loss = Box<dyn Fn(&Policy, &Minibatch) -> Result<PolicyGradient>>;
    let losses: Vec<(&str, Loss)> = vec![
        ("reinforce", Box::new(reinforce_loss)),
        ("a2c", Box::new(|p, m| a2c_loss(p, m, 0.1))),
        ("ppo", Box::new(|p, m| ppo_loss(p, m, 0.2, 0.01))),
        ("trpo ratio", Box::new(trpo_surrogate_loss)),
        (
            "vmpo policy",
            Box::new(|p, m| {
                let w: Vec<f64> = (0..m.len).map(|i| if i % 2 == 0 { 2.0 / m.len as f64 } else { 0.0 }).collect();
                vmpo_policy_loss(p, m, &w)
            }),
        ),
    ];
    let mut out = Vec::new();
    for (name, f) in &losses {
        let mut worst = 0.0f64;
        for seed in 0..3 {
            for discrete in [true, false] {
                let p = tiny_policy(discrete, seed)?;
                let mb = tiny_batch(&p, 6, seed + 10)?;
                let g = f(&p, &mb)?.grad;
                let fd = num_grad(|th| Ok(f(&p.with_flat(th)?, &mb)?.loss), &p.flat(), 1e-6)?;
                worst = worst.max(rel_err(&g, &fd));
            }
        }
        out.push(check(&format!("gradient: {name}"), worst, 1e-4));
    }
    let mut worst = 0.0f64;
    for seed in 0..3 {
        for discrete in [true, false] {
            let p = tiny_policy(discrete, seed)?;
            let mb = tiny_batch(&p, 6, seed + 20)?;
            let st = VmpoState { eta: 1.0, nu_mu: 0.7, nu_sigma: 1.3 };
            let g = vmpo_trust_region_loss(&p, &mb, &st, 0.01, 5e-5)?.grad;
            // The loss value carries stop-gradients; differentiate the KL penalty.
            let fd = num_grad(
                |th| {
                    let t = vmpo_trust_region_loss(&p.with_flat(th)?, &mb, &st, 0.01, 5e-5)?;
                    Ok(st.nu_mu * t.kl_mu + st.nu_sigma * t.kl_sigma)
                },
                &p.flat(),
                1e-6,
            )?;
            worst = worst.max(rel_err(&g, &fd));
        }
    }
    out.push(check("gradient: vmpo trust region", worst, 1e-4));
    let adv = [0.3, -0.2, 1.1, 0.7];
    let (_, d) = vmpo_temperature_loss(&adv, 0.8, 0.01);
    let h = 1e-6;
    let fd = (vmpo_temperature_loss(&adv, 0.8 + h, 0.01).0 - vmpo_temperature_loss(&adv, 0.8 - h, 0.01).0) / (2.0 * h);
    out.push(check("gradient: vmpo temperature", ((d - fd) / fd.abs().max(1e-6)).abs(), 1e-4));
    Ok(out)
}

fn gae_checks() -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 12;
    let r: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let v: Vec<f64> = (0..=n).map(|_| rng.sample(StandardNormal)).collect();
    let term = vec![false; n];
    let zeros = vec![0.0; n];
    let (a0, _) = gae(&r, &v, &term, &term, &zeros, 0.9, 0.0)?;
    let td: f64 = (0..n).map(|t| (a0[t] - (r[t] + 0.9 * v[t + 1] - v[t])).abs()).fold(0.0, f64::max);
    let mut end = term.clone();
    end[n - 1] = true;
    let (a1, _) = gae(&r, &vec![0.0; n + 1], &end, &term, &zeros, 1.0, 1.0)?;
    let mc = mc_returns(&r, 1.0);
    let mcerr = a1.iter().zip(&mc).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(vec![check("gae: lambda 0 is the TD residual", td, 1e-10), check("gae: gamma = lambda = 1 with V = 0 is Monte-Carlo", mcerr, 1e-10)])
}

fn cg_checks() -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for k in 0..20 {
        let n = 2 + k % 19;
        let m = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let a = &m * m.transpose() + DMatrix::identity(n, n) * (n as f64);
        let b = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = conjugate_gradient(|v| Ok((&a * DVector::from_column_slice(v)).as_slice().to_vec()), b.as_slice(), 10 * n, 1e-14)?;
        let direct = a.clone().lu().solve(&b).expect("SPD system");
        worst = worst.max((DVector::from_vec(x) - direct).amax());
    }
    let p = tiny_policy(false, 4)?;
    let mb = tiny_batch(&p, 8, 4)?;
    let u: Vec<f64> = (0..p.num_params()).map(|_| rng.sample(StandardNormal)).collect();
    let v: Vec<f64> = (0..p.num_params()).map(|_| rng.sample(StandardNormal)).collect();
    let hu = fisher_vector_product(&p, &mb, &u, 0.0)?;
    let hv = fisher_vector_product(&p, &mb, &v, 0.0)?;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    Ok(vec![
        check("cg: matches dense solve", worst, 1e-6),
        check("fisher: symmetric", (dot(&u, &hv) - dot(&v, &hu)).abs(), 1e-8),
    ])
}

fn top_half_check() -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut mismatches = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(2..40);
        let adv: Vec<f64> = (0..n).map(|_| (rng.random_range(0..7) as f64) - 3.0).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| adv[j].total_cmp(&adv[i]).then(i.cmp(&j)));
        let mut want = order[..n.div_ceil(2)].to_vec();
        want.sort_unstable();
        if vmpo_select_top_half(&adv)? != want {
            mismatches += 1.0;
        }
    }
    Ok(check("vmpo: top-half selection matches a sort", mismatches, 0.0))
}

fn random_mdp(rng: &mut ChaCha8Rng) -> Result<TabularMdp> {
    let (ns, na) = (rng.random_range(2..6), rng.random_range(2..4));
    let mut p = vec![0.0; ns * na * ns];
    let mut r = vec![0.0; ns * na * ns];
    for s in 0..ns {
        for a in 0..na {
            let w: Vec<f64> = (0..ns).map(|_| rng.random::<f64>()).collect();
            let z: f64 = w.iter().sum();
            for s2 in 0..ns {
                p[(s * na + a) * ns + s2] = w[s2] / z;
                r[(s * na + a) * ns + s2] = (rng.random_range(0..5) as f64) - 2.0;
            }
        }
    }
    let mut p0 = vec![0.0; ns];
    p0[0] = 1.0;
    TabularMdp::new(ns, na, p, r, p0, 0.9, vec![false; ns])
}

fn mirror_checks() -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut mismatches = 0.0;
    for _ in 0..25 {
        let mdp = random_mdp(&mut rng)?;
        let rows: Vec<Vec<f64>> = (0..mdp.n_states)
            .map(|_| {
                let w: Vec<f64> = (0..mdp.n_actions).map(|_| rng.random::<f64>() + 0.05).collect();
                let z: f64 = w.iter().sum();
                w.into_iter().map(|x| x / z).collect()
            })
            .collect();
        let pi = TabularPolicy::new(rows)?;
        if mirror_update(&mdp, &pi, &Drift::Trivial, &Neighborhood::Trivial, 21)? != gpi_step(&mdp, &pi)? {
            mismatches += 1.0;
        }
    }
    let grid = grid_mdp(MdpPreset::Gridworld4x4);
    let pi0 = TabularPolicy::uniform(grid.n_states, grid.n_actions);
    let trace = mirror_converge(&grid, &pi0, &Drift::Trivial, &Neighborhood::Trivial, 50, 21)?;
    let gap = if trace.verify().is_ok() { (trace.optimum - trace.final_j()).abs() } else { f64::INFINITY };
    Ok(vec![
        check("mirror: trivial update equals GPI", mismatches, 0.0),
        check("mirror: trivial drift converges on gridworld4x4", gap, 1e-6),
    ])
}

type CheckGroup = fn() -> Result<Vec<Check>>;

/// Runs every check; a check that errors is reported as failed.
pub fn run_all() -> Vec<Check> {
    let mut out = Vec::new();
    let groups: [(&str, CheckGroup); 5] = [
        ("gradients", gradient_checks),
        ("gae", gae_checks),
        ("cg", cg_checks),
        ("top half", || Ok(vec![top_half_check()?])),
        ("mirror", mirror_checks),
    ];
    for (name, f) in groups {
        match f() {
            Ok(c) => out.extend(c),
            Err(e) => out.push(failed(name, e)),
        }
    }
    out
}
