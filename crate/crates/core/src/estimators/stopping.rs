//! Perfect-zoom stopping times and the drift / tail diagnostics built on them.

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use super::stats::{least_squares, Moments, Z95};
use super::EstimatorError;
use crate::trajectory::{GridInfo, Trajectory};

/// `T_0 = 0`, `T_{z+1} = inf{k > T_z : max_i |h^i_k| <= 1}` for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoppingTimeRecord {
    pub times: Vec<usize>,
    /// Grid exponent of the bin size at each `T_z`.
    pub grid: Vec<i64>,
    pub info: GridInfo,
}

impl StoppingTimeRecord {
    pub fn bin_sizes(&self) -> impl Iterator<Item = f64> + '_ {
        self.grid.iter().map(|g| self.info.bin_size(*g))
    }

    /// `T_{z+1} - T_z` for every complete epoch.
    pub fn gaps(&self) -> impl Iterator<Item = usize> + '_ {
        self.times.windows(2).map(|w| w[1] - w[0])
    }

    /// Replays the definition from the raw states and bin sizes.
    pub fn verify(&self, traj: &Trajectory) -> bool {
        let Some(info) = traj.grid_info else { return false };
        let half = info.levels as f64 / 2.0;
        let in_range = |k: usize| {
            let bin = info.bin_size(traj.grid[k]);
            let h = traj.state(k).iter().fold(0.0f64, |m, v| {
                let h = v.abs() / (bin * half);
                if h.is_nan() { f64::INFINITY } else { m.max(h) }
            });
            h <= 1.0
        };
        let expected: Vec<usize> =
            std::iter::once(0).chain((1..traj.grid.len()).filter(|k| in_range(*k))).collect();
        expected == self.times && self.times.iter().zip(&self.grid).all(|(t, g)| traj.grid[*t] == *g)
    }
}

pub fn stopping_times(traj: &Trajectory) -> Result<StoppingTimeRecord, EstimatorError> {
    let info = traj.grid_info.ok_or(EstimatorError::NoCodecLog)?;
    if traj.grid.is_empty() || traj.in_range.len() != traj.grid.len() {
        return Err(EstimatorError::NoCodecLog);
    }
    let times: Vec<usize> = std::iter::once(0)
        .chain((1..traj.grid.len()).filter(|k| traj.in_range[*k]))
        .collect();
    let grid = times.iter().map(|t| traj.grid[*t]).collect();
    Ok(StoppingTimeRecord { times, grid, info })
}

/// `log2 Delta^2_{T_{z+1}} - log2 Delta^2_{T_z}` for each epoch, keyed by the
/// grid exponent at `T_z`.
fn epoch_drifts(record: &StoppingTimeRecord) -> impl Iterator<Item = (i64, usize, f64)> + '_ {
    let step = record.info.grid_step;
    record
        .times
        .windows(2)
        .zip(record.grid.windows(2))
        .map(move |(t, g)| (g[0], t[1] - t[0], 2.0 * step * (g[1] - g[0]) as f64))
}

#[derive(Debug, Clone, Default, PartialEq)]
struct DriftCell {
    all: Moments,
    gap_one: Moments,
    longer: Moments,
}

impl DriftCell {
    fn push(&mut self, gap: usize, drift: f64) {
        self.all.push(drift);
        if gap == 1 {
            self.gap_one.push(drift);
        } else {
            self.longer.push(drift);
        }
    }

    fn merge(&mut self, other: &DriftCell) {
        self.all.merge(&other.all);
        self.gap_one.merge(&other.gap_one);
        self.longer.merge(&other.longer);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftRow {
    pub grid: i64,
    pub bin_size: f64,
    pub epochs: u64,
    pub mean_drift: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub above_threshold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub threshold: f64,
    pub rows: Vec<DriftRow>,
    /// Epochs with `Delta_{T_z} > F`.
    pub epochs_above: u64,
    /// `b_0 = -E[drift | Delta > F]`.
    pub b0: f64,
    pub b0_std_error: f64,
    pub b0_ci: (f64, f64),
    pub gap_one_fraction: f64,
    /// `P(gap = 1) E[drift | gap = 1]` above `F`.
    pub gap_one_contribution: f64,
    /// `P(gap > 1) E[drift | gap > 1]` above `F`.
    pub longer_contribution: f64,
    pub underpowered: bool,
}

impl DriftReport {
    /// Bins above `F` with at least `min_epochs` samples.
    pub fn powered_rows(&self, min_epochs: u64) -> impl Iterator<Item = &DriftRow> {
        self.rows.iter().filter(move |r| r.above_threshold && r.epochs >= min_epochs)
    }
}

pub const MIN_DRIFT_EPOCHS: u64 = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct DriftAccumulator {
    threshold: f64,
    info: Option<GridInfo>,
    cells: BTreeMap<i64, DriftCell>,
}

impl DriftAccumulator {
    pub fn new(threshold: f64) -> Self {
        Self { threshold, info: None, cells: BTreeMap::new() }
    }

    pub fn add(&mut self, record: &StoppingTimeRecord) {
        self.info.get_or_insert(record.info);
        for (g, gap, drift) in epoch_drifts(record) {
            self.cells.entry(g).or_default().push(gap, drift);
        }
    }

    pub fn merge(&mut self, other: &DriftAccumulator) {
        if self.info.is_none() {
            self.info = other.info;
        }
        for (g, c) in &other.cells {
            self.cells.entry(*g).or_default().merge(c);
        }
    }

    pub fn report(&self) -> DriftReport {
        let mut above = DriftCell::default();
        let mut rows = Vec::with_capacity(self.cells.len());
        for (g, c) in &self.cells {
            let bin_size = self.info.map_or(f64::NAN, |i| i.bin_size(*g));
            let above_threshold = bin_size > self.threshold;
            if above_threshold {
                above.merge(c);
            }
            let se = c.all.std_error();
            rows.push(DriftRow {
                grid: *g,
                bin_size,
                epochs: c.all.count,
                mean_drift: c.all.mean,
                std_error: se,
                ci_low: c.all.mean - Z95 * se,
                ci_high: c.all.mean + Z95 * se,
                above_threshold,
            });
        }
        let n = above.all.count;
        let frac = |m: &Moments| if n == 0 { 0.0 } else { m.count as f64 / n as f64 };
        let b0 = -above.all.mean;
        let se = above.all.std_error();
        let underpowered = n < MIN_DRIFT_EPOCHS;
        if underpowered {
            warn!("drift check has {n} epochs above the threshold; at least {MIN_DRIFT_EPOCHS} are needed");
        }
        DriftReport {
            threshold: self.threshold,
            rows,
            epochs_above: n,
            b0,
            b0_std_error: se,
            b0_ci: (b0 - Z95 * se, b0 + Z95 * se),
            gap_one_fraction: frac(&above.gap_one),
            gap_one_contribution: frac(&above.gap_one) * above.gap_one.mean,
            longer_contribution: frac(&above.longer) * above.longer.mean,
            underpowered,
        }
    }
}

/// Conditional mean change of `log2 Delta^2` between successive stopping
/// times, binned by the bin size at the earlier one.
pub fn drift_check(records: &[StoppingTimeRecord], threshold: f64) -> DriftReport {
    let mut acc = DriftAccumulator::new(threshold);
    records.iter().for_each(|r| acc.add(r));
    acc.report()
}

/// Gaps recorded in one bin-size band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailBin {
    pub lower: f64,
    pub upper: f64,
    pub epochs: u64,
    /// `P(gap >= k)` for `k = 1, 2, ..`.
    pub survival: Vec<f64>,
    /// Fitted per-step decay ratio; `None` when fewer than two tail points.
    pub r_hat: Option<f64>,
    /// Smallest `C` with `P(gap >= k) <= C r_hat^-k` on the fitted range.
    pub c_hat: Option<f64>,
    pub fitted_points: usize,
}

impl TailBin {
    pub fn tail_at(&self, k: usize) -> f64 {
        if k == 0 {
            return 1.0;
        }
        self.survival.get(k - 1).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub bins: Vec<TailBin>,
    /// `P(gap >= 2)` is nonincreasing from the lowest to the highest
    /// populated bin.
    pub tail_decreasing: bool,
    pub underpowered: bool,
}

pub const MIN_TAIL_EPOCHS: u64 = 10_000;
/// Survival points with fewer supporting epochs are left out of the fit.
const MIN_TAIL_SUPPORT: u64 = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct TailAccumulator {
    edges: Vec<f64>,
    counts: Vec<BTreeMap<usize, u64>>,
}

impl TailAccumulator {
    /// `edges` are increasing bin-size boundaries; values outside fall in the
    /// end bins.
    pub fn new(edges: &[f64]) -> Result<Self, EstimatorError> {
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(EstimatorError::Input("tail bins need at least two increasing edges".into()));
        }
        Ok(Self { edges: edges.to_vec(), counts: vec![BTreeMap::new(); edges.len() - 1] })
    }

    fn bin(&self, delta: f64) -> usize {
        let i = self.edges.partition_point(|e| *e <= delta);
        i.saturating_sub(1).min(self.counts.len() - 1)
    }

    pub fn add(&mut self, record: &StoppingTimeRecord) {
        for ((gap, g), _) in record.gaps().zip(&record.grid).zip(0..) {
            let b = self.bin(record.info.bin_size(*g));
            *self.counts[b].entry(gap).or_default() += 1;
        }
    }

    pub fn merge(&mut self, other: &TailAccumulator) {
        for (mine, theirs) in self.counts.iter_mut().zip(&other.counts) {
            for (gap, c) in theirs {
                *mine.entry(*gap).or_default() += c;
            }
        }
    }

    pub fn report(&self) -> TailReport {
        let bins: Vec<TailBin> = self
            .counts
            .iter()
            .enumerate()
            .map(|(i, hist)| tail_bin(self.edges[i], self.edges[i + 1], hist))
            .collect();
        let populated: Vec<f64> = bins.iter().filter(|b| b.epochs > 0).map(|b| b.tail_at(2)).collect();
        let tail_decreasing = populated.windows(2).all(|w| w[1] <= w[0]);
        let total: u64 = bins.iter().map(|b| b.epochs).sum();
        let underpowered = total < MIN_TAIL_EPOCHS;
        if underpowered {
            warn!("tail check has {total} epochs; at least {MIN_TAIL_EPOCHS} are needed");
        }
        TailReport { bins, tail_decreasing, underpowered }
    }
}

fn tail_bin(lower: f64, upper: f64, hist: &BTreeMap<usize, u64>) -> TailBin {
    let epochs: u64 = hist.values().sum();
    let max_gap = hist.keys().next_back().copied().unwrap_or(0);
    let mut at_least = vec![0u64; max_gap + 2];
    for (gap, c) in hist {
        at_least[*gap] += c;
    }
    for k in (1..=max_gap).rev() {
        at_least[k] += at_least[k + 1];
    }
    let survival: Vec<f64> = (1..=max_gap).map(|k| at_least[k] as f64 / epochs as f64).collect();
    let fit_k: Vec<usize> = (1..=max_gap).filter(|k| at_least[*k] >= MIN_TAIL_SUPPORT).collect();
    let (r_hat, c_hat) = if fit_k.len() >= 2 {
        let ks: Vec<f64> = fit_k.iter().map(|k| *k as f64).collect();
        let logs: Vec<f64> = fit_k.iter().map(|k| survival[k - 1].log2()).collect();
        match least_squares(&ks, &logs) {
            Some(fit) => {
                let r = (-fit.slope).exp2();
                let c = fit_k.iter().map(|k| survival[k - 1] * r.powi(*k as i32)).fold(0.0, f64::max);
                (Some(r), Some(c))
            }
            None => (None, None),
        }
    } else {
        (None, None)
    };
    TailBin { lower, upper, epochs, survival, r_hat, c_hat, fitted_points: fit_k.len() }
}

/// Empirical `P(T_{z+1} - T_z >= k)` per bin-size band with a log-linear fit.
pub fn tail_check(records: &[StoppingTimeRecord], edges: &[f64]) -> Result<TailReport, EstimatorError> {
    let mut acc = TailAccumulator::new(edges)?;
    records.iter().for_each(|r| acc.add(r));
    Ok(acc.report())
}
