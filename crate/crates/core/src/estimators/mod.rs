//! Statistical diagnostics over simulated trajectories.
//!
//! Every estimator works on immutable [`Trajectory`] data. The ones used on
//! long replicated runs also expose an accumulator with `add` / `merge` so
//! replications can be folded one at a time, in a fixed order.

mod ams;
mod bode;
mod entropy;
mod escape;
mod histogram;
pub mod stats;
mod stopping;
mod transience;

use std::path::Path;

use serde::Serialize;
use thiserror::Error;

pub use crate::trajectory::Trajectory;
pub use ams::{ams_cesaro_check, CesaroAccumulator, CesaroRow, EventBox};
pub use bode::{bode_integral, welch_psd, BodeEstimate, BodeOptions};
pub use entropy::{
    entropy_estimate, entropy_growth_rate, knn_distances, EntropyEstimate, GrowthFit, Snapshot, DEFAULT_NEIGHBORS,
};
pub use escape::{escape_probability, EscapeAccumulator, EscapeRow, Threshold};
pub use histogram::{OccupationHistogram, DEFAULT_BINS as DEFAULT_HISTOGRAM_BINS};
pub use stopping::{
    drift_check, stopping_times, tail_check, DriftAccumulator, DriftReport, DriftRow, StoppingTimeRecord,
    TailAccumulator, TailBin, TailReport,
};
pub use transience::{transience_probe, ReturnRow, TransienceConfig, TransienceReport};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("invalid estimator input: {0}")]
    Input(String),
    #[error("degenerate sample: {0}")]
    Degenerate(String),
    #[error("threshold family rejected: {0}")]
    Threshold(String),
    #[error("trajectory has no codec log")]
    NoCodecLog,
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Csv { path: String, source: csv::Error },
}

/// Writes one CSV row per element.
pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<(), EstimatorError> {
    let name = path.display().to_string();
    let mut w = csv::Writer::from_path(path).map_err(|source| EstimatorError::Csv { path: name.clone(), source })?;
    for row in rows {
        w.serialize(row).map_err(|source| EstimatorError::Csv { path: name.clone(), source })?;
    }
    w.flush().map_err(|source| EstimatorError::Io { path: name, source })
}

/// Writes a pretty JSON summary.
pub fn write_json<S: Serialize>(path: &Path, summary: &S) -> Result<(), EstimatorError> {
    let name = path.display().to_string();
    let text = serde_json::to_string_pretty(summary).expect("summary types serialize");
    std::fs::write(path, text + "\n").map_err(|source| EstimatorError::Io { path: name, source })
}
