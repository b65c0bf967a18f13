//! Experiment orchestration: training loop, deterministic evaluation,
//! checkpoints, metric logs and plots.
//!
//! Per seed a run writes `<out_dir>/<algo>_<env>/seed<k>/` with
//! `metrics.jsonl` (the source of truth), `metrics.csv` and `checkpoint.pgf`.

mod config;
mod log;
mod plot;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{ExperimentConfig, TOP_KEYS};
pub use log::{jsonl_to_csv, kl_column, kl_tracking_report, median, read_metrics, MetricRecord, CSV_COLUMNS};
pub use plot::{emit_plot, plot_series, PlotSeries};

use crate::algorithms::{Algo, Learner, UpdateStats};
use crate::envs::{make_env, ActionSpace, EnvName, RunningNormalizer, VecEnv};
use crate::error::{config, Error, Result};
use crate::optim::LrSchedule;
use crate::policy::{Policy, ValueFn};
use crate::rollout::Collector;

/// Random stream of the first evaluation episode; training envs use streams
/// `0..num_envs`.
pub const EVAL_STREAM: u64 = 1 << 32;

/// Directory of one (config, seed) run.
pub fn run_dir(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    cfg.out_dir.join(format!("{}_{}", cfg.algo.algo, cfg.env.as_str())).join(format!("seed{seed}"))
}

/// Sub-seeds for the networks, the learner and the collector.
struct Seeds {
    policy: u64,
    value: u64,
    learner: u64,
    collector: u64,
    env: u64,
}

impl Seeds {
    fn derive(seed: u64) -> Self {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        Self {
            policy: r.next_u64(),
            value: r.next_u64(),
            learner: r.next_u64(),
            collector: r.next_u64(),
            env: seed,
        }
    }
}

fn env_space(env: EnvName) -> Result<(usize, ActionSpace)> {
    let e = make_env(env, 0, 0, None)?;
    Ok((e.spec().obs_dim, e.spec().action_space.clone()))
}

/// Fresh learner for `(cfg, seed)`.
pub fn init_learner(cfg: &ExperimentConfig, seed: u64) -> Result<Learner> {
    let s = Seeds::derive(seed);
    let (obs_dim, space) = env_space(cfg.env)?;
    let policy = Policy::new(obs_dim, &cfg.policy_hidden, cfg.activation, space, s.policy)?;
    let value = if cfg.algo.algo.uses_value() {
        Some(ValueFn::new(obs_dim, &cfg.value_hidden, cfg.activation, s.value)?)
    } else {
        None
    };
    Learner::new(cfg.algo.clone(), policy, value, s.learner)
}

/// Mean and population standard deviation of raw episodic returns.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalResult {
    pub mean: f64,
    pub std: f64,
}

/// Runs `episodes` episodes with mode actions. Observations pass through
/// `normalizer` without updating it; rewards are reported raw. Episode `k`
/// uses stream `EVAL_STREAM + k` of `seed`, so repeated calls see the same
/// start states.
pub fn evaluate_policy(
    policy: &Policy,
    normalizer: Option<&RunningNormalizer>,
    env: EnvName,
    episodes: usize,
    seed: u64,
    max_steps: Option<usize>,
) -> Result<EvalResult> {
    if episodes == 0 {
        return Err(config("need at least one evaluation episode"));
    }
    let mut returns = Vec::with_capacity(episodes);
    for k in 0..episodes {
        let mut e = make_env(env, seed, EVAL_STREAM + k as u64, max_steps)?;
        if e.spec().obs_dim != policy.obs_dim() || &e.spec().action_space != policy.space() {
            return Err(config("policy does not match the evaluation environment"));
        }
        let mut obs = e.reset();
        let mut total = 0.0;
        loop {
            let x = normalizer.map_or_else(|| obs.clone(), |n| n.apply(&obs));
            let out = e.step(&policy.mode_action(&x)?)?;
            total += out.reward;
            if out.done() {
                break;
            }
            obs = out.obs;
        }
        returns.push(total);
    }
    let mean = returns.iter().sum::<f64>() / episodes as f64;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / episodes as f64;
    Ok(EvalResult { mean, std: var.sqrt() })
}

const CKPT_NORM_MAGIC: &[u8; 4] = b"NRM1";

/// Policy block, observation-normalizer block, then the remaining learner
/// state (value net, optimizer moments, multipliers, shuffle RNG).
pub fn write_checkpoint(path: &Path, learner: &Learner, normalizer: Option<&RunningNormalizer>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    learner.policy.write_to(&mut w)?;
    w.write_all(CKPT_NORM_MAGIC)?;
    w.write_all(&[normalizer.is_some() as u8])?;
    if let Some(n) = normalizer {
        n.write_to(&mut w)?;
    }
    learner.write_rest(&mut w)?;
    w.flush()?;
    Ok(())
}

fn read_head<R: Read>(r: &mut R, space: ActionSpace) -> Result<(Policy, Option<RunningNormalizer>)> {
    let policy = Policy::read_from(r, space)?;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CKPT_NORM_MAGIC {
        return Err(Error::Schema("checkpoint normalizer block missing".into()));
    }
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let norm = match flag[0] {
        0 => None,
        1 => Some(RunningNormalizer::read_from(r)?),
        _ => return Err(Error::Schema("bad normalizer flag".into())),
    };
    if let Some(n) = &norm {
        if n.dim() != policy.obs_dim() {
            return Err(config("normalizer does not match the policy"));
        }
    }
    Ok((policy, norm))
}

/// Loads the policy and normalizer of a checkpoint for `env`.
pub fn load_policy(path: &Path, env: EnvName) -> Result<(Policy, Option<RunningNormalizer>)> {
    let (obs_dim, space) = env_space(env)?;
    let mut r = BufReader::new(File::open(path)?);
    let (policy, norm) = read_head(&mut r, space).map_err(|e| match e {
        Error::Io(_) | Error::Schema(_) | Error::Config(_) => config(format!("checkpoint does not fit {}: {e}", env.as_str())),
        other => other,
    })?;
    if policy.obs_dim() != obs_dim {
        return Err(config("checkpoint does not match the environment"));
    }
    Ok((policy, norm))
}

/// Full learner plus normalizer, for resuming.
pub fn load_checkpoint(path: &Path, cfg: &ExperimentConfig) -> Result<(Learner, Option<RunningNormalizer>)> {
    let (_, space) = env_space(cfg.env)?;
    let mut r = BufReader::new(File::open(path)?);
    let (policy, norm) = read_head(&mut r, space)?;
    let learner = Learner::read_rest(cfg.algo.clone(), policy, &mut r)?;
    Ok((learner, norm))
}

/// Evaluates a saved checkpoint.
pub fn evaluate(checkpoint: &Path, env: EnvName, episodes: usize, seed: u64) -> Result<EvalResult> {
    let (policy, norm) = load_policy(checkpoint, env)?;
    evaluate_policy(&policy, norm.as_ref(), env, episodes, seed, None)
}

/// Result of one training run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub log: PathBuf,
    pub checkpoint: PathBuf,
    pub records: Vec<MetricRecord>,
    pub env_steps: u64,
}

impl RunOutcome {
    pub fn best_eval(&self) -> Option<f64> {
        self.records.iter().filter_map(|r| r.eval_mean_return).reduce(f64::max)
    }
}

fn record(step: u64, update: u64, s: &UpdateStats, train_return: Option<f64>) -> MetricRecord {
    MetricRecord {
        step,
        update,
        policy_loss: s.policy_loss,
        value_loss: s.value_loss,
        entropy: s.entropy,
        approx_kl: s.approx_kl,
        exact_kl: s.exact_kl,
        clip_fraction: s.clip_fraction,
        eta: s.eta,
        nu_mu: s.nu_mu,
        nu_sigma: s.nu_sigma,
        grad_norm: s.grad_norm,
        eval_mean_return: None,
        eval_std_return: None,
        rejected_update: s.rejected_update,
        psi_weight_error: s.psi_weight_error,
        train_return,
    }
}

/// Alternates collection and updates until `total_steps` env steps, writing
/// one JSONL record per update. Evaluations run after the update that
/// crosses each multiple of `eval_every` and after the last update. If a
/// module fails, everything logged so far is flushed before the error
/// propagates.
pub fn run_training(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutcome> {
    cfg.validate()?;
    let dir = run_dir(cfg, seed);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.txt"), cfg.to_text())?;
    let log_path = dir.join("metrics.jsonl");
    let ckpt = dir.join("checkpoint.pgf");

    let s = Seeds::derive(seed);
    let mut learner = init_learner(cfg, seed)?;
    let a = &cfg.algo;
    let venv = VecEnv::new(cfg.env, a.num_envs, s.env, 0, cfg.max_episode_steps)?;
    let mut collector = Collector::new(
        venv,
        cfg.normalize_obs,
        cfg.scale_rewards,
        a.gamma,
        ChaCha8Rng::seed_from_u64(s.collector),
    )?;
    let schedule = if cfg.total_steps == 0 {
        LrSchedule::constant(a.lr)
    } else {
        LrSchedule::new(a.lr, cfg.total_steps, a.lr_floor_fraction)?
    };

    let mut writer = BufWriter::new(File::create(&log_path)?);
    let mut records = Vec::new();
    let (mut step, mut update) = (0u64, 0u64);
    let mut next_eval = cfg.eval_every;
    let result: Result<()> = (|| {
        while step < cfg.total_steps {
            let lr = schedule.lr_at(step);
            let mut batch = if a.algo == Algo::Reinforce {
                collector.collect_episodes(&learner.policy, None, a.unroll)?
            } else {
                collector.collect(&learner.policy, learner.value.as_ref(), a.unroll)?
            };
            step += batch.len() as u64;
            update += 1;
            let train_return = (!batch.episode_returns.is_empty())
                .then(|| batch.episode_returns.iter().sum::<f64>() / batch.episode_returns.len() as f64);
            let stats = learner.update(&mut batch, lr)?;
            let mut rec = record(step, update, &stats, train_return);
            let last = step >= cfg.total_steps;
            if step >= next_eval || last {
                while next_eval <= step {
                    next_eval += cfg.eval_every;
                }
                let ev = evaluate_policy(
                    &learner.policy,
                    collector.obs_norm.as_ref(),
                    cfg.env,
                    cfg.eval_episodes,
                    s.env,
                    cfg.max_episode_steps,
                )?;
                rec.eval_mean_return = Some(ev.mean);
                rec.eval_std_return = Some(ev.std);
            }
            serde_json::to_writer(&mut writer, &rec)?;
            writer.write_all(b"\n")?;
            writer.flush()?;
            let stop = matches!((cfg.stop_at_return, rec.eval_mean_return), (Some(t), Some(m)) if m >= t);
            records.push(rec);
            if stop {
                break;
            }
        }
        Ok(())
    })();
    writer.flush()?;
    result?;
    write_checkpoint(&ckpt, &learner, collector.obs_norm.as_ref())?;
    jsonl_to_csv(&[(seed, log_path.clone())], &dir.join("metrics.csv"))?;
    Ok(RunOutcome {
        dir,
        log: log_path,
        checkpoint: ckpt,
        records,
        env_steps: step,
    })
}

/// Trains every configured seed and writes a combined `metrics.csv` next to
/// the per-seed directories.
pub fn run_all_seeds(cfg: &ExperimentConfig) -> Result<Vec<RunOutcome>> {
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        out.push(run_training(cfg, seed)?);
    }
    let logs: Vec<(u64, PathBuf)> = cfg.seeds.iter().copied().zip(out.iter().map(|o| o.log.clone())).collect();
    let root = cfg.out_dir.join(format!("{}_{}", cfg.algo.algo, cfg.env.as_str()));
    jsonl_to_csv(&logs, &root.join("metrics.csv"))?;
    Ok(out)
}
