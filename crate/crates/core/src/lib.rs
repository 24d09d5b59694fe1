//! Rectified-flow image restoration with cumulative velocity fields.
//!
//! This crate holds the numerical core and performs no IO: dense tensors
//! with a reverse-mode tape, flow construction, velocity targets and
//! matching losses, the few-step Euler samplers, multi-step consistency
//! training, small time-conditioned networks, synthetic degradations and
//! distortion metrics. It is `no_std` and only needs `alloc`.
//!
//! File formats, configuration and the command-line driver live in the
//! companion `irflow` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod data;
mod error;
pub mod flow;
mod math;
pub mod mct;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod restore;
pub mod rng;
pub mod sampler;
pub mod tensor;
pub mod velocity;

pub use autodiff::{gradient_error, Gradients, Tape, Var};
pub use error::{Error, Result};
pub use flow::{CoupledSchedule, FlowState};
pub use mct::{PairBatch, PairSource, TrainConfig, Trainer};
pub use model::{ArchConfig, Checkpoint, TimeConditionedNet};
pub use sampler::{SamplerConfig, VelocityField};
pub use tensor::Tensor;
pub use velocity::VelocityMode;
