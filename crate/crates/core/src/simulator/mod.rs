//! Force/stiffness assembly, semi-implicit backward Euler integration,
//! constrained stepping, static equilibrium and trajectory error metrics.

mod assembly;
mod integrator;
mod trajectory;

pub use assembly::{assemble, assemble_forces, element_gradient_operator, Assembly, AssemblyRequest, ForceEval};
pub use integrator::{constrained_step, simulate, simulate_constrained, static_equilibrium, step, DofMap};
pub use trajectory::{max_vertex_error, max_vertex_error_subset, per_frame_errors, Trajectory};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::materials::{GradientMode, MaterialKind, MaterialParams};
use crate::neural::Mlp;
use crate::numerics::SolverOptions;

/// How the network term enters the stiffness and damping matrices.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeuralStiffness {
    /// Full derivative including the variation of the SVD rotations.
    #[default]
    Exact,
    /// Rotations held fixed; only the diagonal path is differentiated.
    FixedFrame,
}

/// A simulated material: ground truth (any kind, optional Rayleigh damping)
/// or the neural material (corotational nominal plus network correction).
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialModel {
    pub params: MaterialParams,
    pub net: Option<Mlp>,
    /// Per-element multiplier of the Young's modulus (heterogeneous ground
    /// truth); `None` means homogeneous.
    pub element_scale: Option<Vec<f64>>,
}

impl MaterialModel {
    pub fn truth(params: MaterialParams) -> Self {
        MaterialModel {
            params,
            net: None,
            element_scale: None,
        }
    }

    pub fn neural(params: MaterialParams, net: Option<Mlp>) -> Result<Self> {
        if net.is_some() && params.kind != MaterialKind::Corotational {
            return Err(Error::InvalidMaterial("the network corrects the corotational model only".into()));
        }
        Ok(MaterialModel {
            params,
            net,
            element_scale: None,
        })
    }

    /// Ground truth whose element `e` has Young's modulus `scale[e]·E`.
    pub fn heterogeneous(params: MaterialParams, scale: Vec<f64>) -> Result<Self> {
        if scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidMaterial("element stiffness scales must be finite and > 0".into()));
        }
        Ok(MaterialModel {
            params,
            net: None,
            element_scale: Some(scale),
        })
    }

    pub(crate) fn scale(&self, e: usize) -> f64 {
        self.element_scale.as_ref().map_or(1.0, |s| s[e])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Time step (s).
    pub h: f64,
    /// Gravitational acceleration (m/s²).
    pub gravity: [f64; 3],
    pub solver: SolverOptions,
    pub gradient: GradientMode,
    pub neural_stiffness: NeuralStiffness,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            h: 1e-3,
            gravity: [0.0, -9.81, 0.0],
            solver: SolverOptions::default(),
            gradient: GradientMode::FiniteDifference,
            neural_stiffness: NeuralStiffness::Exact,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::invalid(format!("time step must be > 0, got {}", self.h)));
        }
        if !self.gravity.iter().all(|g| g.is_finite()) {
            return Err(Error::NonFinite("gravity".into()));
        }
        Ok(())
    }
}

/// Positions and velocities (flattened, 3N each) at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub t: f64,
}

impl SimState {
    pub fn at_rest(x: Vec<f64>) -> Self {
        let n = x.len();
        SimState {
            x,
            v: vec![0.0; n],
            t: 0.0,
        }
    }
}
