//! Axis-aligned occupation histogram with explicit out-of-box mass.

use serde::{Deserialize, Serialize};

use super::EstimatorError;

pub const DEFAULT_BINS: usize = 64;
const MAX_CELLS: usize = 1 << 22;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationHistogram {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub bins: usize,
    pub counts: Vec<u64>,
    pub out_of_box: u64,
    pub total: u64,
}

impl OccupationHistogram {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, bins: usize) -> Result<Self, EstimatorError> {
        if lower.is_empty() || lower.len() != upper.len() || bins == 0 {
            return Err(EstimatorError::Input("histogram box needs matching non-empty bounds".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(EstimatorError::Input("histogram box must have finite lower < upper".into()));
        }
        let cells = bins
            .checked_pow(lower.len() as u32)
            .filter(|c| *c <= MAX_CELLS)
            .ok_or_else(|| EstimatorError::Input("too many histogram cells".into()))?;
        Ok(Self { lower, upper, bins, counts: vec![0; cells], out_of_box: 0, total: 0 })
    }

    /// Symmetric box `[-r, r]^N` with `r` the `quantile` of `|x_i|` over the
    /// finite samples.
    pub fn from_quantile(samples: &[f64], dim: usize, quantile: f64, bins: usize) -> Result<Self, EstimatorError> {
        let mut abs: Vec<f64> = samples.iter().filter(|v| v.is_finite()).map(|v| v.abs()).collect();
        if abs.is_empty() || dim == 0 {
            return Err(EstimatorError::Input("no finite samples for the histogram box".into()));
        }
        abs.sort_by(f64::total_cmp);
        let idx = ((abs.len() - 1) as f64 * quantile.clamp(0.0, 1.0)).round() as usize;
        let r = abs[idx].max(f64::MIN_POSITIVE);
        Self::new(vec![-r; dim], vec![r; dim], bins)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn cell(&self, x: &[f64]) -> Option<usize> {
        let mut index = 0;
        for (i, v) in x.iter().enumerate() {
            let (lo, hi) = (self.lower[i], self.upper[i]);
            if !(*v >= lo && *v <= hi) {
                return None;
            }
            let b = (((v - lo) / (hi - lo)) * self.bins as f64) as usize;
            index = index * self.bins + b.min(self.bins - 1);
        }
        Some(index)
    }

    pub fn add(&mut self, x: &[f64]) {
        self.total += 1;
        match self.cell(x) {
            Some(c) => self.counts[c] += 1,
            None => self.out_of_box += 1,
        }
    }

    pub fn merge(&mut self, other: &OccupationHistogram) -> Result<(), EstimatorError> {
        if self.lower != other.lower || self.upper != other.upper || self.bins != other.bins {
            return Err(EstimatorError::Input("histograms cover different boxes".into()));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        self.out_of_box += other.out_of_box;
        self.total += other.total;
        Ok(())
    }

    /// Fraction of samples inside the box.
    pub fn mass_inside(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        (self.total - self.out_of_box) as f64 / self.total as f64
    }

    /// Empirical measure over cells followed by the out-of-box atom.
    pub fn measure(&self) -> Vec<f64> {
        let n = self.total.max(1) as f64;
        self.counts.iter().chain(std::iter::once(&self.out_of_box)).map(|c| *c as f64 / n).collect()
    }
}
