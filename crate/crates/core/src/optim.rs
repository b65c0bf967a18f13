//! SGD, Adam, global-norm clipping and a linear learning-rate decay.

use std::io::{Read, Write};

use crate::error::{config, contract, Result};
use crate::nn::{read_f64s, write_f64s};

fn check_len(params: &[f64], grads: &[f64]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(contract(format!(
            "parameter length {} does not match gradient length {}",
            params.len(),
            grads.len()
        )));
    }
    Ok(())
}

/// Descent step `θ ← θ − lr·g`.
pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    check_len(params, grads)?;
    if !(lr > 0.0) {
        return Err(config("learning rate must be positive"));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Bias-corrected Adam descent step, in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        check_len(params, grads)?;
        if self.m.len() != params.len() {
            return Err(contract("optimizer state length does not match parameters"));
        }
        if !(lr > 0.0) {
            return Err(config("learning rate must be positive"));
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&self.t.to_le_bytes())?;
        write_f64s(w, &[self.beta1, self.beta2, self.eps])?;
        write_f64s(w, &self.m)?;
        write_f64s(w, &self.v)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut t = [0u8; 8];
        r.read_exact(&mut t)?;
        let hyper = read_f64s(r)?;
        if hyper.len() != 3 {
            return Err(crate::Error::Schema("malformed optimizer block".into()));
        }
        let m = read_f64s(r)?;
        let v = read_f64s(r)?;
        if m.len() != v.len() {
            return Err(crate::Error::Schema("optimizer moments differ in length".into()));
        }
        Ok(Self {
            m,
            v,
            t: u64::from_le_bytes(t),
            beta1: hyper[0],
            beta2: hyper[1],
            eps: hyper[2],
        })
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(
    state: &AdamState,
    params: &[f64],
    grads: &[f64],
    lr: f64,
) -> Result<(Vec<f64>, AdamState)> {
    let mut state = state.clone();
    let mut params = params.to_vec();
    state.step(&mut params, grads, lr)?;
    Ok((params, state))
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Rescales `grads` in place so its norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = l2_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub total_steps: u64,
    pub floor_fraction: f64,
}

impl LrSchedule {
    pub fn new(base_lr: f64, total_steps: u64, floor_fraction: f64) -> Result<Self> {
        if !(base_lr > 0.0) {
            return Err(config("base learning rate must be positive"));
        }
        if total_steps == 0 {
            return Err(config("schedule needs at least one step"));
        }
        if !(0.0..=1.0).contains(&floor_fraction) {
            return Err(config("floor fraction must lie in [0, 1]"));
        }
        Ok(Self {
            base_lr,
            total_steps,
            floor_fraction,
        })
    }

    pub fn constant(lr: f64) -> Self {
        Self {
            base_lr: lr,
            total_steps: 1,
            floor_fraction: 1.0,
        }
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        let frac = step.min(self.total_steps) as f64 / self.total_steps as f64;
        self.base_lr * (1.0 - (1.0 - self.floor_fraction) * frac)
    }
}

pub fn lr_at(schedule: &LrSchedule, step: u64) -> f64 {
    schedule.lr_at(step)
}
