//! Running mean/variance statistics for observation and reward scaling.

use std::io::{Read, Write};

use crate::error::{contract, Error, Result};
use crate::nn::{read_f64s, write_f64s};

pub const DEFAULT_CLIP: f64 = 10.0;
const VAR_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct RunningNormalizer {
    pub count: f64,
    pub mean: Vec<f64>,
    /// Sum of squared deviations from the mean.
    pub m2: Vec<f64>,
    pub clip: f64,
}

impl RunningNormalizer {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            clip: DEFAULT_CLIP,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn variance(&self) -> Vec<f64> {
        if self.count == 0.0 {
            return vec![1.0; self.dim()];
        }
        self.m2.iter().map(|m| (m / self.count).max(0.0)).collect()
    }

    /// Merges a batch of rows (row-major, `dim` columns) into the statistics.
    pub fn update(&mut self, rows: &[f64]) -> Result<()> {
        let d = self.dim();
        if d == 0 || rows.is_empty() || !rows.len().is_multiple_of(d) {
            return Err(contract("normalizer batch must be a non-empty multiple of its dimension"));
        }
        let n = (rows.len() / d) as f64;
        let mut batch_mean = vec![0.0; d];
        for row in rows.chunks_exact(d) {
            for (m, x) in batch_mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        batch_mean.iter_mut().for_each(|m| *m /= n);
        let mut batch_m2 = vec![0.0; d];
        for row in rows.chunks_exact(d) {
            for ((s, x), m) in batch_m2.iter_mut().zip(row).zip(&batch_mean) {
                *s += (x - m) * (x - m);
            }
        }
        let total = self.count + n;
        for i in 0..d {
            let delta = batch_mean[i] - self.mean[i];
            self.mean[i] += delta * n / total;
            self.m2[i] += batch_m2[i] + delta * delta * self.count * n / total;
        }
        self.count = total;
        Ok(())
    }

    /// `clip((x − mean) / sqrt(var + 1e-8))`. Before any update the input is
    /// only clipped.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let var = self.variance();
        x.iter()
            .enumerate()
            .map(|(i, v)| {
                let j = i % self.dim();
                ((v - self.mean[j]) / (var[j] + VAR_EPS).sqrt()).clamp(-self.clip, self.clip)
            })
            .collect()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        write_f64s(w, &[self.count, self.clip])?;
        write_f64s(w, &self.mean)?;
        write_f64s(w, &self.m2)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let head = read_f64s(r)?;
        let mean = read_f64s(r)?;
        let m2 = read_f64s(r)?;
        if head.len() != 2 || mean.len() != m2.len() {
            return Err(Error::Schema("malformed normalizer block".into()));
        }
        Ok(Self { count: head[0], mean, m2, clip: head[1] })
    }
}

/// Scales rewards by the running spread of each environment's discounted
/// return. The mean is not subtracted so the sign of a reward is preserved.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardScaler {
    pub gamma: f64,
    pub returns: Vec<f64>,
    pub stats: RunningNormalizer,
}

impl RewardScaler {
    pub fn new(num_envs: usize, gamma: f64) -> Self {
        Self {
            gamma,
            returns: vec![0.0; num_envs],
            stats: RunningNormalizer::new(1),
        }
    }

    /// Updates the return statistics and returns the scaled rewards.
    pub fn scale(&mut self, rewards: &[f64], done: &[bool]) -> Result<Vec<f64>> {
        if rewards.len() != self.returns.len() || done.len() != rewards.len() {
            return Err(contract("reward scaler expects one reward per environment"));
        }
        for (g, r) in self.returns.iter_mut().zip(rewards) {
            *g = *g * self.gamma + r;
        }
        self.stats.update(&self.returns)?;
        let std = (self.stats.variance()[0] + VAR_EPS).sqrt();
        for (g, d) in self.returns.iter_mut().zip(done) {
            if *d {
                *g = 0.0;
            }
        }
        let clip = self.stats.clip;
        Ok(rewards.iter().map(|r| (r / std).clamp(-clip, clip)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn single_value() {
        let mut n = RunningNormalizer::new(1);
        n.update(&[5.0]).unwrap();
        assert_eq!(n.mean, vec![5.0]);
        assert_eq!(n.apply(&[5.0]), vec![0.0]);
    }

    #[test]
    fn constant_stream_normalizes_to_zero() {
        let mut n = RunningNormalizer::new(2);
        for _ in 0..100 {
            n.update(&[3.0, 3.0, 3.0, 3.0]).unwrap();
        }
        assert_eq!(n.apply(&[3.0, 3.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn outliers_clip_exactly() {
        let mut n = RunningNormalizer::new(1);
        n.update(&[0.0, 1.0, -1.0]).unwrap();
        assert_eq!(n.apply(&[1e9, -1e9]), vec![10.0, -10.0]);
    }

    #[test]
    fn matches_two_pass_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut n = RunningNormalizer::new(2);
        let mut all = Vec::new();
        for _ in 0..10_000 {
            let k = rng.random_range(1..6);
            let batch: Vec<f64> = (0..2 * k)
                .map(|i| if i % 2 == 0 { rng.random_range(-3.0..7.0) } else { 100.0 + rng.random::<f64>() })
                .collect();
            n.update(&batch).unwrap();
            all.extend(batch);
        }
        for j in 0..2 {
            let col: Vec<f64> = all.iter().skip(j).step_by(2).cloned().collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / col.len() as f64;
            assert!((n.mean[j] - mean).abs() <= 1e-8 * mean.abs());
            assert!((n.variance()[j] - var).abs() <= 1e-8 * var);
        }
    }

    #[test]
    fn normalized_gaussian_has_unit_spread() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<f64> = (0..20_000).map(|_| 4.0 + 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let mut n = RunningNormalizer::new(1);
        n.update(&xs).unwrap();
        let out = n.apply(&xs);
        let m = out.iter().sum::<f64>() / out.len() as f64;
        let sd = (out.iter().map(|x| (x - m).powi(2)).sum::<f64>() / out.len() as f64).sqrt();
        assert!((sd - 1.0).abs() < 0.05);
    }

    #[test]
    fn round_trip() {
        let mut n = RunningNormalizer::new(3);
        n.update(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut buf = Vec::new();
        n.write_to(&mut buf).unwrap();
        assert_eq!(RunningNormalizer::read_from(&mut buf.as_slice()).unwrap(), n);
    }

    #[test]
    fn reward_scaler_keeps_sign_and_resets() {
        let mut s = RewardScaler::new(2, 0.99);
        for _ in 0..10 {
            let out = s.scale(&[1.0, -2.0], &[false, true]).unwrap();
            assert!(out[0] > 0.0 && out[1] < 0.0);
        }
        assert_eq!(s.returns[1], 0.0);
        assert!(s.returns[0] > 1.0);
    }

    proptest! {
        #[test]
        fn mean_is_order_insensitive(xs in prop::collection::vec(-1e3f64..1e3, 2..60), split in 1usize..59) {
            let split = split.min(xs.len() - 1);
            let mut a = RunningNormalizer::new(1);
            a.update(&xs[..split]).unwrap();
            a.update(&xs[split..]).unwrap();
            let mut rev = xs.clone();
            rev.reverse();
            let mut b = RunningNormalizer::new(1);
            for x in &rev { b.update(&[*x]).unwrap(); }
            prop_assert!((a.mean[0] - b.mean[0]).abs() <= 1e-9 * a.mean[0].abs().max(1.0));
            prop_assert!(a.variance()[0] >= 0.0 && b.variance()[0] >= 0.0);
        }
    }
}
