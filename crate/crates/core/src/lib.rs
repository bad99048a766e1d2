//! Learning neural corrections to a nominal corotational material from
//! sparse surface trajectories of a deforming tetrahedral mesh.
//!
//! The outer loop alternates a reduced space-time optimization, least-norm
//! recovery of per-element stress corrections, and retraining of a small
//! stress-correction network; forward re-simulation measures progress.

pub mod config;
pub mod error;
pub mod materials;
pub mod mesh;
pub mod neural;
pub mod numerics;
pub mod pipeline;
pub mod recovery;
pub mod simulator;
pub mod spacetime;

pub use error::{Error, Result};
