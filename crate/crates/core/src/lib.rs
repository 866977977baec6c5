//! Simulation and diagnostics for controlling nonlinear stochastic plants
//! over finite-capacity channels with an adaptive zoom quantizer.
//!
//! * [`dynamics`]: plant models, Jacobians, seeded noise.
//! * [`channel`]: discrete memoryless channels and Blahut-Arimoto capacity.
//! * [`codec`]: zoom encoder/decoder, sign coder, finite-memory coders.
//! * [`bounds`]: log-Jacobian rate and necessary/sufficient rate checks.
//! * [`estimators`]: entropy, escape, stopping-time, Cesàro, transience and
//!   spectral diagnostics.
//! * [`harness`]: configuration, replicated runs, persistence, sweeps.
//!
//! The model, channel and codec layers are generic over [`Real`] (`f32` or
//! `f64`); the aliases below fix `f64`, which the estimators and harness use.

// NaN-rejecting guards are written as `!(x > 0.0)` on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod channel;
pub mod codec;
pub mod dynamics;
pub mod estimators;
pub mod harness;
pub mod scalar;
pub mod trajectory;

pub use scalar::Real;
pub use trajectory::{GridInfo, Link, Trajectory};

pub type Model = dynamics::SystemModel<f64>;
pub type Channel = channel::ChannelModel<f64>;
pub type Params = codec::ZoomParams<f64>;
pub type Encoder = codec::ZoomEncoder<f64>;
pub type Decoder = codec::ZoomDecoder<f64>;
pub type SignCoder = codec::SignZoomCoder<f64>;
pub type Capacity = channel::CapacityResult<f64>;
