use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use pgrad::algorithms::Algo;
use pgrad::envs::{grid_mdp_named, EnvName};
use pgrad::harness::{self, ExperimentConfig};
use pgrad::tabular::{mirror_converge, Drift, Neighborhood, TabularPolicy};

#[derive(Parser)]
#[command(name = "pgrad", version, about = "Policy-gradient training, evaluation and checks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train every configured seed and write logs and checkpoints.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Train only this seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        algo: Option<String>,
        #[arg(long)]
        env: Option<String>,
        #[arg(long)]
        total_steps: Option<u64>,
    },
    /// Evaluate a checkpoint with mode actions.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the built-in gradient, GAE, CG and mirror-learning checks.
    Verify,
    /// Iterate the tabular mirror update and print the return trace as CSV.
    MirrorDemo {
        #[arg(long, default_value = "gridworld4x4")]
        mdp: String,
        #[arg(long, value_enum, default_value_t = DriftArg::Trivial)]
        drift: DriftArg,
        #[arg(long, default_value_t = 0.2)]
        epsilon: f64,
        /// Radius of the KL-ball neighborhood; unconstrained when absent.
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, default_value_t = 50)]
        iters: usize,
        #[arg(long, default_value_t = 21)]
        resolution: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw mean ± std learning curves from a metrics CSV.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "eval_mean_return")]
        columns: Vec<String>,
        #[arg(long, default_value_t = 1)]
        window: usize,
    },
    /// Print the per-update KL series of a JSONL log.
    KlReport {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        algo: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DriftArg {
    Trivial,
    Ppo,
}

fn train(
    config: Option<PathBuf>,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    algo: Option<String>,
    env: Option<String>,
    total_steps: Option<u64>,
) -> Result<()> {
    let text = match &config {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => String::new(),
    };
    let mut overrides: Vec<(&str, String)> = Vec::new();
    if let Some(a) = algo {
        overrides.push(("algo", a));
    }
    if let Some(e) = env {
        overrides.push(("env", e));
    }
    if let Some(s) = seed {
        overrides.push(("seeds", s.to_string()));
    }
    if let Some(t) = total_steps {
        overrides.push(("total_steps", t.to_string()));
    }
    if let Some(d) = out_dir {
        overrides.push(("out_dir", d.display().to_string()));
    }
    let cfg = ExperimentConfig::parse_with_overrides(&text, &overrides)?;
    for &s in &cfg.seeds {
        let start = Instant::now();
        let out = harness::run_training(&cfg, s)?;
        let last = out.records.iter().rev().find_map(|r| r.eval_mean_return);
        println!(
            "seed {s}: {} updates, {} env steps, last eval {}, {:.1}s -> {}",
            out.records.len(),
            out.env_steps,
            last.map_or("n/a".into(), |v| format!("{v:.2}")),
            start.elapsed().as_secs_f64(),
            out.dir.display()
        );
    }
    let logs: Vec<(u64, PathBuf)> = cfg.seeds.iter().map(|&s| (s, harness::run_dir(&cfg, s).join("metrics.jsonl"))).collect();
    let root = cfg.out_dir.join(format!("{}_{}", cfg.algo.algo, cfg.env.as_str()));
    harness::jsonl_to_csv(&logs, &root.join("metrics.csv"))?;
    Ok(())
}

fn run() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Train { config, seed, out_dir, algo, env, total_steps } => train(config, seed, out_dir, algo, env, total_steps)?,
        Cmd::Evaluate { checkpoint, env, episodes, seed } => {
            let env: EnvName = env.parse()?;
            let r = harness::evaluate(&checkpoint, env, episodes, seed)?;
            println!("mean {:.4} std {:.4} over {episodes} episodes", r.mean, r.std);
        }
        Cmd::Verify => {
            let checks = pgrad::verify::run_all();
            let failed = checks.iter().filter(|c| !c.passed).count();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if failed > 0 {
                bail!("{failed} check(s) failed");
            }
        }
        Cmd::MirrorDemo { mdp, drift, epsilon, delta, iters, resolution, out } => {
            let m = grid_mdp_named(&mdp)?;
            let d = match drift {
                DriftArg::Trivial => Drift::Trivial,
                DriftArg::Ppo => Drift::Ppo { epsilon },
            };
            let n = delta.map_or(Neighborhood::Trivial, |delta| Neighborhood::KlBall { delta });
            let pi0 = TabularPolicy::uniform(m.n_states, m.n_actions);
            let trace = mirror_converge(&m, &pi0, &d, &n, iters, resolution)?;
            match out {
                Some(p) => trace.write_csv_file(&p)?,
                None => trace.write_csv(std::io::stdout())?,
            }
            eprintln!(
                "{} / {}: J0 {:.6}, final {:.6}, optimum {:.6}",
                trace.drift,
                trace.neighborhood,
                trace.j0,
                trace.final_j(),
                trace.optimum
            );
            trace.verify()?;
        }
        Cmd::Plot { csv, out, columns, window } => {
            let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
            harness::emit_plot(&csv, &out, &cols, window)?;
        }
        Cmd::KlReport { log, algo } => {
            let algo: Algo = algo.parse()?;
            let series = harness::kl_tracking_report(&log, algo)?;
            println!("update,{}", harness::kl_column(algo));
            for (i, v) in series.iter().enumerate() {
                println!("{},{v}", i + 1);
            }
            if let Some(m) = harness::median(&series) {
                eprintln!("median {m:.3e} over {} updates", series.len());
            }
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
