//! Finite MDPs with explicit transition and reward tensors.

use std::str::FromStr;

use rand::Rng;

use crate::error::{config, contract, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MdpPreset {
    /// Stay in place for 1 per step, or exit for a one-off 2.
    TwoState,
    /// Five states in a row; reaching the right end pays 1.
    Chain5,
    /// 4x4 deterministic grid; reaching the far corner pays 1.
    Gridworld4x4,
}

impl FromStr for MdpPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_state" => Ok(MdpPreset::TwoState),
            "chain5" => Ok(MdpPreset::Chain5),
            "gridworld4x4" => Ok(MdpPreset::Gridworld4x4),
            other => Err(config(format!("unknown MDP preset '{other}'"))),
        }
    }
}

impl MdpPreset {
    pub fn name(self) -> &'static str {
        match self {
            MdpPreset::TwoState => "two_state",
            MdpPreset::Chain5 => "chain5",
            MdpPreset::Gridworld4x4 => "gridworld4x4",
        }
    }
}

/// Terminal states are absorbing with zero reward; solvers pin their value to 0.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// `p[(s * n_actions + a) * n_states + s2]`.
    pub p: Vec<f64>,
    /// Same layout as `p`.
    pub r: Vec<f64>,
    pub p0: Vec<f64>,
    pub gamma: f64,
    pub terminal: Vec<bool>,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        p: Vec<f64>,
        r: Vec<f64>,
        p0: Vec<f64>,
        gamma: f64,
        terminal: Vec<bool>,
    ) -> Result<Self> {
        let mdp = Self { n_states, n_actions, p, r, p0, gamma, terminal };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Stochastic-matrix and shape checks.
    pub fn validate(&self) -> Result<()> {
        let (s, a) = (self.n_states, self.n_actions);
        if s == 0 || a == 0 {
            return Err(config("MDP needs at least one state and one action"));
        }
        if self.p.len() != s * a * s || self.r.len() != s * a * s {
            return Err(config("transition or reward tensor has the wrong size"));
        }
        if self.p0.len() != s || self.terminal.len() != s {
            return Err(config("start distribution or terminal mask has the wrong size"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(config("discount must lie in [0, 1]"));
        }
        for row in self.p.chunks_exact(s) {
            if row.iter().any(|&x| x < 0.0) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(config("transition row is not a probability distribution"));
            }
        }
        if self.p0.iter().any(|&x| x < 0.0) || (self.p0.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(config("start distribution does not sum to 1"));
        }
        Ok(())
    }

    #[inline]
    pub fn idx(&self, s: usize, a: usize, s2: usize) -> usize {
        (s * self.n_actions + a) * self.n_states + s2
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = self.idx(s, a, 0);
        &self.p[start..start + self.n_states]
    }

    /// Expected one-step reward `Σ_s' P(s'|s,a) R(s,a,s')`.
    pub fn expected_reward(&self, s: usize, a: usize) -> f64 {
        let start = self.idx(s, a, 0);
        (0..self.n_states).map(|k| self.p[start + k] * self.r[start + k]).sum()
    }

    /// Samples a successor state and its reward.
    pub fn sample_step<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> Result<(usize, f64)> {
        if s >= self.n_states || a >= self.n_actions {
            return Err(contract("state or action index out of range"));
        }
        let row = self.transition_row(s, a);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut next = self.n_states - 1;
        for (k, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                next = k;
                break;
            }
        }
        Ok((next, self.r[self.idx(s, a, next)]))
    }

    pub fn sample_start<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (s, p) in self.p0.iter().enumerate() {
            acc += p;
            if u < acc {
                return s;
            }
        }
        self.n_states - 1
    }
}

struct Builder {
    s: usize,
    a: usize,
    p: Vec<f64>,
    r: Vec<f64>,
}

impl Builder {
    fn new(s: usize, a: usize) -> Self {
        Self { s, a, p: vec![0.0; s * a * s], r: vec![0.0; s * a * s] }
    }

    fn set(&mut self, s: usize, a: usize, s2: usize, reward: f64) {
        let i = (s * self.a + a) * self.s + s2;
        self.p[i] = 1.0;
        self.r[i] = reward;
    }
}

pub fn grid_mdp(preset: MdpPreset) -> TabularMdp {
    let (n_states, n_actions, terminal_state, gamma, b) = match preset {
        MdpPreset::TwoState => {
            let mut b = Builder::new(2, 2);
            b.set(0, 0, 0, 1.0);
            b.set(0, 1, 1, 2.0);
            (2, 2, 1, 0.9, b)
        }
        MdpPreset::Chain5 => {
            // Action 0 moves left (bouncing at 0), action 1 moves right.
            let mut b = Builder::new(5, 2);
            for s in 0..4usize {
                let left = s.saturating_sub(1);
                b.set(s, 0, left, 0.0);
                b.set(s, 1, s + 1, if s + 1 == 4 { 1.0 } else { 0.0 });
            }
            (5, 2, 4, 0.9, b)
        }
        MdpPreset::Gridworld4x4 => {
            // Actions: up, right, down, left. Moving into a wall stays put.
            let mut b = Builder::new(16, 4);
            for s in 0..15usize {
                let (row, col) = (s / 4, s % 4);
                let moves = [
                    if row > 0 { s - 4 } else { s },
                    if col < 3 { s + 1 } else { s },
                    if row < 3 { s + 4 } else { s },
                    if col > 0 { s - 1 } else { s },
                ];
                for (a, &s2) in moves.iter().enumerate() {
                    b.set(s, a, s2, if s2 == 15 { 1.0 } else { 0.0 });
                }
            }
            (16, 4, 15, 0.9, b)
        }
    };
    let mut b = b;
    for a in 0..n_actions {
        b.set(terminal_state, a, terminal_state, 0.0);
    }
    let mut p0 = vec![0.0; n_states];
    p0[0] = 1.0;
    let mut terminal = vec![false; n_states];
    terminal[terminal_state] = true;
    TabularMdp::new(n_states, n_actions, b.p, b.r, p0, gamma, terminal).expect("presets are valid")
}

/// Looks a preset up by name.
pub fn grid_mdp_named(name: &str) -> Result<TabularMdp> {
    Ok(grid_mdp(name.parse()?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_stochastic() {
        for p in [MdpPreset::TwoState, MdpPreset::Chain5, MdpPreset::Gridworld4x4] {
            let m = grid_mdp(p);
            m.validate().unwrap();
            for s in 0..m.n_states {
                for a in 0..m.n_actions {
                    assert!((m.transition_row(s, a).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
        }
        let g = grid_mdp(MdpPreset::Gridworld4x4);
        assert_eq!((g.n_states, g.n_actions), (16, 4));
    }

    #[test]
    fn unknown_preset() {
        assert!(matches!(grid_mdp_named("maze"), Err(Error::Config(_))));
        assert_eq!(grid_mdp_named("chain5").unwrap().n_states, 5);
    }

    #[test]
    fn bad_rows_rejected() {
        let mut m = grid_mdp(MdpPreset::TwoState);
        m.p[0] = 0.5;
        assert!(m.validate().is_err());
    }
}
