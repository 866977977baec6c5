//! Cesàro averages of box-occupation probabilities.

use serde::{Deserialize, Serialize};

use super::EstimatorError;
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl EventBox {
    pub fn centered(radius: f64, dim: usize) -> Self {
        Self { lower: vec![-radius; dim], upper: vec![radius; dim] }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| *v >= *l && *v <= *u)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CesaroRow {
    pub event: usize,
    pub n: usize,
    /// `(1/N) sum_{k<N} P(x_k in B)`.
    pub average: f64,
    pub average_doubled: f64,
    pub gap: f64,
    pub replications: u64,
}

/// Streams trajectories into hit counts over prefixes `0..N` and `0..2N`.
#[derive(Debug, Clone, PartialEq)]
pub struct CesaroAccumulator {
    events: Vec<EventBox>,
    checkpoints: Vec<usize>,
    /// `[event][checkpoint][0 = N, 1 = 2N]`.
    hits: Vec<Vec<[u64; 2]>>,
    replications: u64,
}

impl CesaroAccumulator {
    pub fn new(events: Vec<EventBox>, checkpoints: &[usize]) -> Result<Self, EstimatorError> {
        if events.is_empty() || checkpoints.is_empty() || checkpoints.contains(&0) {
            return Err(EstimatorError::Input("need at least one event box and positive N".into()));
        }
        let hits = vec![vec![[0; 2]; checkpoints.len()]; events.len()];
        Ok(Self { events, checkpoints: checkpoints.to_vec(), hits, replications: 0 })
    }

    /// Trajectories shorter than `2N` states are rejected.
    pub fn add(&mut self, traj: &Trajectory) -> Result<(), EstimatorError> {
        let longest = 2 * self.checkpoints.iter().max().copied().unwrap_or(0);
        if traj.len() + 1 < longest {
            return Err(EstimatorError::Input(format!(
                "trajectory has {} states, Cesaro check needs {longest}",
                traj.len() + 1
            )));
        }
        for (e, event) in self.events.iter().enumerate() {
            let mut running = 0u64;
            let mut prefix = vec![0u64; longest + 1];
            for (k, x) in traj.states_iter().take(longest).enumerate() {
                running += event.contains(x) as u64;
                prefix[k + 1] = running;
            }
            for (c, &n) in self.checkpoints.iter().enumerate() {
                self.hits[e][c][0] += prefix[n];
                self.hits[e][c][1] += prefix[2 * n];
            }
        }
        self.replications += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &CesaroAccumulator) {
        for (mine, theirs) in self.hits.iter_mut().zip(&other.hits) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                a[0] += b[0];
                a[1] += b[1];
            }
        }
        self.replications += other.replications;
    }

    pub fn rows(&self) -> Vec<CesaroRow> {
        let r = self.replications.max(1) as f64;
        let mut rows = Vec::new();
        for (e, per) in self.hits.iter().enumerate() {
            for (c, &n) in self.checkpoints.iter().enumerate() {
                let average = per[c][0] as f64 / (r * n as f64);
                let average_doubled = per[c][1] as f64 / (r * 2.0 * n as f64);
                rows.push(CesaroRow {
                    event: e,
                    n,
                    average,
                    average_doubled,
                    gap: (average_doubled - average).abs(),
                    replications: self.replications,
                });
            }
        }
        rows
    }
}

/// Cesàro averages at each `N` and `2N` with their Cauchy gap.
pub fn ams_cesaro_check(
    trajectories: &[Trajectory],
    events: Vec<EventBox>,
    checkpoints: &[usize],
) -> Result<Vec<CesaroRow>, EstimatorError> {
    let mut acc = CesaroAccumulator::new(events, checkpoints)?;
    for t in trajectories {
        acc.add(t)?;
    }
    Ok(acc.rows())
}
