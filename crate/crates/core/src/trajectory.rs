//! Per-replication simulation record.

use serde::{Deserialize, Serialize};

/// What crossed the channel at one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    /// No coder in the loop.
    Open,
    Delivered { sent: u32, received: u32 },
    Erased { sent: u32 },
}

/// Zoom-grid metadata needed to turn grid exponents back into bin sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub delta0: f64,
    pub grid_step: f64,
    pub levels: u32,
}

impl GridInfo {
    pub fn bin_size(&self, grid: i64) -> f64 {
        self.delta0 * (grid as f64 * self.grid_step).exp2()
    }
}

/// Time-indexed record of one closed-loop run.
///
/// `states` holds `x_0 ..= x_T` (`len() + 1` rows); every other per-step
/// column holds `len()` entries for `t = 0 .. T-1`. `grid` and `in_range`
/// are empty unless a zoom coder produced the run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dim: usize,
    pub seed: u64,
    pub config_hash: String,
    pub states: Vec<f64>,
    pub controls: Vec<f64>,
    pub links: Vec<Link>,
    /// Decoder-side grid exponent used at each step.
    pub grid: Vec<i64>,
    /// Whether every coordinate was inside the quantizer range.
    pub in_range: Vec<bool>,
    pub grid_info: Option<GridInfo>,
    /// First time the state left the finite range (absorbing thereafter).
    pub diverged_at: Option<usize>,
}

impl Trajectory {
    pub fn new(dim: usize, seed: u64, config_hash: impl Into<String>) -> Self {
        Self {
            dim,
            seed,
            config_hash: config_hash.into(),
            states: Vec::new(),
            controls: Vec::new(),
            links: Vec::new(),
            grid: Vec::new(),
            in_range: Vec::new(),
            grid_info: None,
            diverged_at: None,
        }
    }

    /// Number of steps `T`.
    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn state(&self, t: usize) -> &[f64] {
        &self.states[t * self.dim..(t + 1) * self.dim]
    }

    pub fn control(&self, t: usize) -> &[f64] {
        &self.controls[t * self.dim..(t + 1) * self.dim]
    }

    pub fn states_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.dim)
    }

    pub fn bin_size(&self, t: usize) -> Option<f64> {
        Some(self.grid_info?.bin_size(*self.grid.get(t)?))
    }

    /// Column lengths agree with each other.
    pub fn is_consistent(&self) -> bool {
        let n = self.len();
        self.states.len() == (n + 1) * self.dim
            && self.controls.len() == n * self.dim
            && (self.grid.is_empty() || self.grid.len() == n)
            && self.grid.len() == self.in_range.len()
    }
}
