//! Escape probabilities `P(|x_T| <= b(T))` for sublinear-exponent thresholds.

use serde::{Deserialize, Serialize};

use super::stats::{wilson_interval, Z95};
use super::EstimatorError;
use crate::trajectory::Trajectory;

/// Threshold family `b(T)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Threshold {
    /// `b(T) = T`.
    #[default]
    Linear,
    /// `b(T) = 2^sqrt(T)`.
    ExpSqrt,
    Constant { value: f64 },
    /// `b(T) = scale * T^power`.
    Power { scale: f64, power: f64 },
    /// `b(T) = 2^(rate T)`; only admissible for `rate = 0`.
    Exponential { rate: f64 },
}

impl Threshold {
    pub fn radius(&self, t: f64) -> f64 {
        match *self {
            Threshold::Linear => t,
            Threshold::ExpSqrt => t.sqrt().exp2(),
            Threshold::Constant { value } => value,
            Threshold::Power { scale, power } => scale * t.powf(power),
            Threshold::Exponential { rate } => (rate * t).exp2(),
        }
    }

    pub fn log2_radius(&self, t: f64) -> f64 {
        match *self {
            Threshold::Linear => t.log2(),
            Threshold::ExpSqrt => t.sqrt(),
            Threshold::Constant { value } => value.log2(),
            Threshold::Power { scale, power } => scale.log2() + power * t.log2(),
            Threshold::Exponential { rate } => rate * t,
        }
    }

    /// Checks on `grid` that `r(T) = |log2 b(T)| / T` decays: past its
    /// largest value `r` must be nonincreasing and end strictly lower
    /// (or vanish identically).
    pub fn validate(&self, grid: &[usize]) -> Result<(), EstimatorError> {
        let mut pts: Vec<usize> = grid.iter().copied().filter(|t| *t > 0).collect();
        pts.sort_unstable();
        pts.dedup();
        if pts.len() < 2 {
            return Err(EstimatorError::Threshold("need at least two positive horizons".into()));
        }
        let mut ratios = Vec::with_capacity(pts.len());
        for t in &pts {
            let log_b = self.log2_radius(*t as f64);
            if !log_b.is_finite() {
                return Err(EstimatorError::Threshold(format!("b({t}) is not positive and finite")));
            }
            ratios.push(log_b.abs() / *t as f64);
        }
        let peak = (0..ratios.len()).fold(0, |best, i| if ratios[i] > ratios[best] { i } else { best });
        let last = ratios[ratios.len() - 1];
        if ratios[peak] == 0.0 {
            return Ok(());
        }
        let settles = ratios[peak..].windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
        if !settles || !(last < ratios[peak]) {
            return Err(EstimatorError::Threshold(format!(
                "log2 b(T)/T does not decay: {:.4} at T={} vs {last:.4} at T={}",
                ratios[peak],
                pts[peak],
                pts[pts.len() - 1]
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeRow {
    pub t: usize,
    /// `log2 b(T)`; stays finite where `b(T)` itself would overflow.
    pub log2_radius: f64,
    pub inside: u64,
    pub total: u64,
    pub fraction: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EscapeAccumulator {
    threshold: Threshold,
    times: Vec<usize>,
    inside: Vec<u64>,
    total: Vec<u64>,
}

impl EscapeAccumulator {
    pub fn new(threshold: Threshold, times: &[usize]) -> Result<Self, EstimatorError> {
        threshold.validate(times)?;
        Ok(Self { threshold, times: times.to_vec(), inside: vec![0; times.len()], total: vec![0; times.len()] })
    }

    pub fn add(&mut self, traj: &Trajectory) {
        for (i, &t) in self.times.iter().enumerate() {
            if t > traj.len() {
                continue;
            }
            let norm = traj.state(t).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            self.total[i] += 1;
            if norm <= self.threshold.radius(t as f64) {
                self.inside[i] += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &EscapeAccumulator) {
        for i in 0..self.times.len() {
            self.inside[i] += other.inside[i];
            self.total[i] += other.total[i];
        }
    }

    pub fn rows(&self) -> Vec<EscapeRow> {
        self.times
            .iter()
            .enumerate()
            .filter(|(i, _)| self.total[*i] > 0)
            .map(|(i, &t)| {
                let (ci_low, ci_high) = wilson_interval(self.inside[i], self.total[i], Z95);
                EscapeRow {
                    t,
                    log2_radius: self.threshold.log2_radius(t as f64),
                    inside: self.inside[i],
                    total: self.total[i],
                    fraction: self.inside[i] as f64 / self.total[i] as f64,
                    ci_low,
                    ci_high,
                }
            })
            .collect()
    }
}

/// Per-`T` fraction of replications with `|x_T|_inf <= b(T)`.
pub fn escape_probability(
    trajectories: &[Trajectory],
    threshold: Threshold,
    times: &[usize],
) -> Result<Vec<EscapeRow>, EstimatorError> {
    let mut acc = EscapeAccumulator::new(threshold, times)?;
    trajectories.iter().for_each(|t| acc.add(t));
    Ok(acc.rows())
}
