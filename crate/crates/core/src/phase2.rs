//! Phase 2: continuum bandit on the recovered subspace.
//!
//! The ball `B_k(1+ν)` is discretized with a cubic lattice of step `1/M`,
//! the surviving points are embedded as strategies `Âᵀy`, and UCB-1 picks
//! among them. With a known horizon a single epoch with `M` tuned to `n2`
//! suffices.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::env::{Environment, LinearParamMatrix};
use crate::error::{Error, Result};
use crate::linalg::{ball_lattice, lattice_axis_count};

/// `M = max(1, round((n2 / log n2)^{1/(k+2)}))`.
pub fn choose_m(n2: f64, k: usize) -> usize {
    if !(n2 > 1.0) {
        return 1;
    }
    let m = (n2 / n2.ln()).powf(1.0 / (k as f64 + 2.0)).round();
    (m as usize).max(1)
}

#[derive(Clone, Debug)]
pub struct ArmGrid {
    pub m: usize,
    pub k: usize,
    pub nu: f64,
    /// Lattice points `y_a ∈ B_k(1+ν)`.
    pub lattice: Vec<DVector<f64>>,
    /// Strategies `x_a = Âᵀ y_a`.
    pub arms: Vec<DVector<f64>>,
}

impl ArmGrid {
    pub fn len(&self) -> usize {
        self.arms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arms.is_empty()
    }

    /// Lattice candidates before filtering to the ball: `(2⌊(1+ν)M⌋ + 1)^k`.
    pub fn candidate_count(&self) -> usize {
        lattice_axis_count(1.0 + self.nu, 1.0 / self.m as f64).pow(self.k as u32)
    }
}

/// Lattice `{j/M : |j/M| ≤ 1+ν}^k` filtered to `B_k(1+ν)` and mapped through `Âᵀ`.
pub fn build_arm_grid(a_hat: &LinearParamMatrix, m: usize, nu: f64) -> Result<ArmGrid> {
    if m == 0 {
        return Err(Error::InvalidParameter("M must be >= 1".into()));
    }
    if !(nu >= 0.0) {
        return Err(Error::InvalidParameter(format!("nu must be >= 0, got {nu}")));
    }
    let k = a_hat.k();
    let lattice = ball_lattice(k, 1.0 + nu, 1.0 / m as f64);
    let arms = lattice.iter().map(|y| a_hat.embed(y)).collect();
    Ok(ArmGrid {
        m,
        k,
        nu,
        lattice,
        arms,
    })
}

/// UCB-1 bookkeeping for a finite arm set.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Ucb1State {
    pub counts: Vec<u64>,
    pub means: Vec<f64>,
    pub t: u64,
    /// Exploration scale `s` in reward units.
    pub scale: f64,
}

impl Ucb1State {
    pub fn new(arms: usize, scale: f64) -> Self {
        Self {
            counts: vec![0; arms],
            means: vec![0.0; arms],
            t: 0,
            scale,
        }
    }

    /// Lowest-index unpulled arm, otherwise
    /// `argmax_a means[a] + s √(2 log t / counts[a])` with ties to the lowest index.
    pub fn select(&self) -> usize {
        assert!(!self.counts.is_empty(), "UCB-1 needs at least one arm");
        if let Some(a) = self.counts.iter().position(|&c| c == 0) {
            return a;
        }
        let log_t2 = 2.0 * (self.t as f64).ln();
        let mut best = 0;
        let mut best_index = f64::NEG_INFINITY;
        for (a, (&c, &mean)) in self.counts.iter().zip(&self.means).enumerate() {
            let index = mean + self.scale * (log_t2 / c as f64).sqrt();
            if index > best_index {
                best_index = index;
                best = a;
            }
        }
        best
    }

    pub fn update(&mut self, arm: usize, reward: f64) {
        self.counts[arm] += 1;
        self.t += 1;
        let n = self.counts[arm] as f64;
        self.means[arm] += (reward - self.means[arm]) / n;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EpochMode {
    /// One grid tuned to the known horizon.
    #[default]
    Single,
    /// Doubling epochs `2^i`, each with its own grid and fresh UCB-1 state.
    Doubling,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase2Config {
    pub scale: f64,
    #[serde(default)]
    pub epochs: EpochMode,
    /// Fixed discretization level instead of [`choose_m`].
    #[serde(default)]
    pub m_override: Option<usize>,
}

impl Phase2Config {
    /// Default exploration scale `σ + 2·C2`.
    pub fn for_env(env: &Environment) -> Self {
        Self {
            scale: env.sigma() + 2.0 * env.c2(),
            epochs: EpochMode::Single,
            m_override: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Play {
    pub epoch: u32,
    pub arm: u32,
    pub reward: f64,
    /// Noiseless mean reward of the played arm (bookkeeping only).
    pub mean: f64,
}

#[derive(Clone, Debug)]
pub struct Phase2Outcome {
    pub grids: Vec<ArmGrid>,
    pub plays: Vec<Play>,
    pub state: Ucb1State,
}

impl Phase2Outcome {
    pub fn grid(&self) -> &ArmGrid {
        &self.grids[0]
    }
}

/// Play exactly `n2` rounds of grid UCB-1 on `{Âᵀy : y ∈ B_k(1+ν)}`.
pub fn run_phase2(
    env: &mut Environment,
    a_hat: &LinearParamMatrix,
    n2: u64,
    cfg: &Phase2Config,
) -> Result<Phase2Outcome> {
    if a_hat.d() != env.d() {
        return Err(Error::ShapeMismatch {
            expected: format!("d = {}", env.d()),
            got: format!("d = {}", a_hat.d()),
        });
    }
    if env.remaining() < n2 {
        return Err(Error::InsufficientBudget {
            requested: n2,
            remaining: env.remaining(),
        });
    }
    let k = a_hat.k();
    let epochs: Vec<u64> = match cfg.epochs {
        EpochMode::Single => vec![n2],
        EpochMode::Doubling => {
            let mut v = Vec::new();
            let mut left = n2;
            let mut len = 1u64;
            while left > 0 {
                let take = len.min(left);
                v.push(take);
                left -= take;
                len *= 2;
            }
            v
        }
    };

    let mut grids = Vec::with_capacity(epochs.len());
    let mut plays = Vec::with_capacity(n2 as usize);
    let mut state = Ucb1State::new(0, cfg.scale);
    for (e, &len) in epochs.iter().enumerate() {
        let m = cfg.m_override.unwrap_or_else(|| choose_m(len as f64, k));
        let grid = build_arm_grid(a_hat, m, env.nu())?;
        let means = grid
            .arms
            .iter()
            .map(|x| env.mean_reward(x))
            .collect::<Result<Vec<_>>>()?;
        state = Ucb1State::new(grid.len(), cfg.scale);
        for _ in 0..len {
            let arm = state.select();
            let reward = env.sample_reward(&grid.arms[arm])?;
            state.update(arm, reward);
            plays.push(Play {
                epoch: e as u32,
                arm: arm as u32,
                reward,
                mean: means[arm],
            });
        }
        grids.push(grid);
    }
    Ok(Phase2Outcome {
        grids,
        plays,
        state,
    })
}
