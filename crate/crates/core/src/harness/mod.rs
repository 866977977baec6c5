//! Experiment orchestration: configuration, seeded replication, the
//! closed-loop driver, persistence, sweeps and reports.

mod bode;
mod config;
mod report;
mod run;
mod sim;
mod sweep;

use thiserror::Error;

pub use bode::{run_bode, simulate_loop, BodeExperiment, BodeRun};
pub use config::{derive_seed, stream, ChannelSpec, CoderSpec, EstimatorSpec, ExperimentConfig, ModelSpec};
pub use report::{report, Report};
pub use run::{
    run_closed_loop, run_experiment, run_map, trajectory_file, write_trajectory, EntropyRow, RunManifest, RunOutcome,
    RunSummary, TailRow, VERSION,
};
pub use sim::{build_channel, build_model, default_delta0, CoderPlan, Plan, DIVERGENCE_LIMIT};
pub use sweep::{run_sweep, SweepAxis, SweepRow};

use crate::bounds::BoundsError;
use crate::channel::ChannelError;
use crate::codec::CodecError;
use crate::dynamics::ModelError;
use crate::estimators::EstimatorError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("missing artifacts: {}", .0.join(", "))]
    Missing(Vec<String>),
    #[error("corrupted artifact {path}: {reason}")]
    Corrupt { path: String, reason: String },
}

impl HarnessError {
    /// Process exit status: 1 for configuration problems, 3 for I/O.
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Io { .. } | HarnessError::Missing(_) | HarnessError::Corrupt { .. } => 3,
            HarnessError::Estimator(EstimatorError::Io { .. } | EstimatorError::Csv { .. }) => 3,
            _ => 1,
        }
    }
}
