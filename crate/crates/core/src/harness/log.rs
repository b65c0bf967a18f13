//! JSONL metric records, the derived CSV and the KL series extraction.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::algorithms::Algo;
use crate::error::{Error, Result};

/// One line of `metrics.jsonl`. Wall-clock time is deliberately absent so
/// that logs are reproducible byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    /// Environment steps consumed so far.
    pub step: u64,
    pub update: u64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub exact_kl: Option<f64>,
    pub clip_fraction: Option<f64>,
    pub eta: Option<f64>,
    pub nu_mu: Option<f64>,
    pub nu_sigma: Option<f64>,
    pub grad_norm: f64,
    pub eval_mean_return: Option<f64>,
    pub eval_std_return: Option<f64>,
    pub rejected_update: Option<bool>,
    pub psi_weight_error: Option<f64>,
    /// Mean raw return of training episodes that ended in this batch.
    pub train_return: Option<f64>,
}

pub const CSV_COLUMNS: [&str; 18] = [
    "seed",
    "step",
    "update",
    "policy_loss",
    "value_loss",
    "entropy",
    "approx_kl",
    "exact_kl",
    "clip_fraction",
    "eta",
    "nu_mu",
    "nu_sigma",
    "grad_norm",
    "eval_mean_return",
    "eval_std_return",
    "rejected_update",
    "psi_weight_error",
    "train_return",
];

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Schema(format!("bad metric record: {e}")))?);
    }
    Ok(out)
}

fn cell<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Concatenates per-seed JSONL logs into one CSV with a leading seed column.
/// Absent values become empty cells.
pub fn jsonl_to_csv(logs: &[(u64, PathBuf)], out: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(out)?;
    w.write_record(CSV_COLUMNS)?;
    for (seed, path) in logs {
        for r in read_metrics(path)? {
            w.write_record([
                seed.to_string(),
                r.step.to_string(),
                r.update.to_string(),
                r.policy_loss.to_string(),
                r.value_loss.to_string(),
                r.entropy.to_string(),
                r.approx_kl.to_string(),
                cell(r.exact_kl),
                cell(r.clip_fraction),
                cell(r.eta),
                cell(r.nu_mu),
                cell(r.nu_sigma),
                r.grad_norm.to_string(),
                cell(r.eval_mean_return),
                cell(r.eval_std_return),
                cell(r.rejected_update),
                cell(r.psi_weight_error),
                cell(r.train_return),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Column holding the per-update KL between consecutive policies: the
/// analytic KL for TRPO, the sample estimate otherwise.
pub fn kl_column(algo: Algo) -> &'static str {
    if algo == Algo::Trpo {
        "exact_kl"
    } else {
        "approx_kl"
    }
}

/// Per-update KL series of a JSONL log. A record without a numeric value in
/// the required column is a schema error.
pub fn kl_tracking_report(log: &Path, algo: Algo) -> Result<Vec<f64>> {
    let col = kl_column(algo);
    let mut out = Vec::new();
    for (no, line) in BufReader::new(File::open(log)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| Error::Schema(format!("line {}: {e}", no + 1)))?;
        let x = v
            .get(col)
            .and_then(|x| x.as_f64())
            .ok_or_else(|| Error::Schema(format!("line {}: no numeric '{col}'", no + 1)))?;
        out.push(x);
    }
    Ok(out)
}

/// Median of a series; `None` when empty.
pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}
