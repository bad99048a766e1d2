//! Sparse reduced space-time optimization: PCA basis from a seed
//! trajectory, reduced physics and position residuals, damped Gauss-Newton
//! with a factored Jacobian, and control-force extraction.

mod basis;
mod problem;

pub use basis::{build_basis, BasisOptions, ReducedBasis};
pub use problem::{ControlForces, IterationReport, SpacetimeOptions, SpacetimeProblem, SpacetimeReport};
