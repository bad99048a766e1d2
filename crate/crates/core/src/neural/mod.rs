//! The 6-in / 3-out stress-correction network: inference, input Jacobian,
//! training from scratch and JSON checkpoints.

mod dataset;
mod mlp;
mod train;

pub use dataset::{Sample, TrainingSet};
pub use mlp::{Mlp, Standardizer, CHECKPOINT_SCHEMA};
pub use train::{train, TrainConfig, TrainReport};
