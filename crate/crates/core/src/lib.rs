//! MRM-Net: a dual-resolution, mutual-learning network for multi-label ECG
//! classification, with its data pipeline, metrics and experiment drivers.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;

pub use checkpoint::Checkpoint;
pub use config::{Lengths, ModelConfig, VariantKind};
pub use error::{Error, Result};
pub use model::loss::{ForwardArtifacts, LossBreakdown, Output};
pub use model::{EvalBranch, Model, Prediction};
