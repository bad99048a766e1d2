//! Constitutive models: the nominal principal-stretch corotational model,
//! StVK and Neo-Hookean ground truths, the neural-corrected world stress and
//! stress gradients.

mod gradient;
mod models;

pub use gradient::{principal_stress_differential, stress_gradient, GradientMode, PrincipalStressJacobian};
pub use models::{
    composed_world_stress, corot_diag_stress, corot_world_stress, lame_from_young_poisson, neohookean_piola,
    rotated_diag_velocity, stvk_piola, ElementFrame, MaterialKind, MaterialParams,
};
