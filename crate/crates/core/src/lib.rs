//! Neural additive models for competing-risks survival analysis.
//!
//! Each feature passes through its own small network. The network's
//! representation is projected onto one unit direction per risk, and the
//! per-feature contributions are summed into a log-hazard ratio for every
//! cause. Training maximises a weighted cause-specific Cox partial likelihood.
//! Predictions are turned into cumulative incidence curves through Breslow
//! baseline hazards.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod export;
pub mod hazard;
pub mod interpret;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod train;

pub use data::{RawDataset, Schema, SurvivalDataset};
pub use error::{Error, Result};
pub use model::{Architecture, ModelParams};
pub use pipeline::FittedModel;
pub use train::{fit, TrainConfig};
