//! Control forces → per-element diagonal stress corrections → training pairs.

use crate::error::{Error, Result};
use crate::materials::ElementFrame;
use crate::mesh::TetMesh;
use crate::neural::{Mlp, Sample, TrainingSet};
use crate::numerics::{least_norm_solve, CsrMatrix, Vec3};
use crate::simulator::{assemble_forces, DofMap, MaterialModel, SimConfig};
use crate::spacetime::ControlForces;

/// LSQR tolerance on `‖Bᵀ(Bp̂ − f)‖ / ‖Bᵀf‖`.
pub const RECOVERY_TOL: f64 = 1e-12;

/// Recovered diagonal stresses of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagStressField {
    pub frame: usize,
    pub stresses: Vec<Vec3>,
}

/// Minimum-norm `p̂` with `BᵀB p̂ = Bᵀf`, rows of `immobilized` vertices
/// removed (their forces go into the supports).
pub fn recover_stresses(b: &CsrMatrix, f: &[f64], immobilized: &[usize]) -> Result<Vec<Vec3>> {
    let (n, cols) = b.shape();
    if f.len() != n || n % 3 != 0 || cols % 3 != 0 {
        return Err(Error::ShapeMismatch(format!(
            "stress basis is {n}x{cols}, force has {} entries",
            f.len()
        )));
    }
    let dofs = DofMap::new(n / 3, immobilized);
    let all: Vec<usize> = (0..cols).collect();
    let bf = b.select(&dofs.free, &all);
    let rhs: Vec<f64> = dofs.free.iter().map(|&i| f[i]).collect();

    // A field with no component in range(B) (e.g. uniform forces) has
    // Bᵀf at roundoff level; its exact answer is zero.
    let btf = bf.mul_transpose_vec(&rhs);
    let scale = bf.frobenius_norm() * crate::numerics::norm(&rhs);
    let p = if crate::numerics::norm(&btf) <= 1e-13 * scale {
        vec![0.0; cols]
    } else {
        least_norm_solve(&bf, &rhs, RECOVERY_TOL)?
    };
    Ok(p.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect())
}

/// `(F̂, F̂̇)` inputs and targets `N(F̂, F̂̇) + ζ_P p̂*` for every element.
pub fn build_training_set(frames: &[(usize, Vec<ElementFrame>)], stresses: &[DiagStressField], net: Option<&Mlp>, zeta_p: f64) -> Result<TrainingSet> {
    if frames.len() != stresses.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} element-frame sets for {} stress fields",
            frames.len(),
            stresses.len()
        )));
    }
    let mut samples = Vec::with_capacity(frames.iter().map(|f| f.1.len()).sum());
    for ((frame, elems), field) in frames.iter().zip(stresses) {
        if *frame != field.frame || elems.len() != field.stresses.len() {
            return Err(Error::ShapeMismatch(format!("frame {frame} is not aligned with its stresses")));
        }
        for (e, (ef, p)) in elems.iter().zip(&field.stresses).enumerate() {
            let base = net.map_or(Vec3::zeros(), |n| n.forward(&ef.fhat, &ef.fdot_hat));
            let t = base + zeta_p * p;
            samples.push(Sample {
                input: [ef.fhat.x, ef.fhat.y, ef.fhat.z, ef.fdot_hat.x, ef.fdot_hat.y, ef.fdot_hat.z],
                target: [t.x, t.y, t.z],
                frame: *frame,
                element: e,
            });
        }
    }
    Ok(TrainingSet::new(samples))
}

/// Recovery over a whole optimized trajectory. Stresses of frame `j` use
/// `B` at `x_j` with `v_j = (x_j − x_{j−1})/h`, matching where the control
/// forces were evaluated. Frames whose control force is negligible against
/// the weight are skipped.
#[allow(clippy::too_many_arguments)]
pub fn recover_trajectory(
    mesh: &TetMesh,
    model: &MaterialModel,
    cfg: &SimConfig,
    positions: &[Vec<f64>],
    forces: &ControlForces,
    immobilized: &[usize],
    net: Option<&Mlp>,
    zeta_p: f64,
) -> Result<TrainingSet> {
    let weight = mesh.total_mass() * cfg.gravity.iter().map(|g| g * g).sum::<f64>().sqrt().max(1.0);
    let mut frames = Vec::new();
    let mut fields = Vec::new();
    for j in 1..positions.len().min(forces.frames.len()) {
        let f = &forces.frames[j];
        if crate::numerics::norm(f) < 1e-12 * weight {
            continue;
        }
        let v: Vec<f64> = positions[j].iter().zip(&positions[j - 1]).map(|(a, b)| (a - b) / cfg.h).collect();
        let eval = assemble_forces(mesh, model, &positions[j], &v, cfg).map_err(|e| e.in_stage("stress recovery", j))?;
        let stresses = recover_stresses(&eval.b, f, immobilized).map_err(|e| e.in_stage("stress recovery", j))?;
        frames.push((j, eval.frames));
        fields.push(DiagStressField { frame: j, stresses });
    }
    build_training_set(&frames, &fields, net, zeta_p)
}
