use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::pca_basis;
use crate::simulator::{DofMap, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasisOptions {
    /// Take every `stride`-th frame.
    pub stride: usize,
    /// Length of the sampled window (s), starting at frame 0.
    pub window: f64,
    /// Fraction of the sampled frames kept as basis columns.
    pub keep_ratio: f64,
}

impl Default for BasisOptions {
    fn default() -> Self {
        BasisOptions {
            stride: 5,
            window: 0.5,
            keep_ratio: 0.5,
        }
    }
}

/// `x = offset + Φ z`; `Φ` has orthonormal columns and zero rows on
/// immobilized dofs, whose rest positions live in `offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedBasis {
    pub phi: DMatrix<f64>,
    pub offset: Vec<f64>,
    /// PCA truncation residual `‖X − ΦΦᵀX‖_F` over the sampled frames.
    pub tail_energy: f64,
    pub sampled_frames: usize,
}

impl ReducedBasis {
    pub fn k(&self) -> usize {
        self.phi.ncols()
    }

    pub fn dim(&self) -> usize {
        self.phi.nrows()
    }

    pub fn expand(&self, z: &DVector<f64>) -> Vec<f64> {
        let y = &self.phi * z;
        y.iter().zip(&self.offset).map(|(a, b)| a + b).collect()
    }

    pub fn project(&self, x: &[f64]) -> DVector<f64> {
        let d = DVector::from_iterator(x.len(), x.iter().zip(&self.offset).map(|(a, b)| a - b));
        self.phi.tr_mul(&d)
    }
}

pub fn build_basis(seed: &Trajectory, immobilized: &[usize], opts: &BasisOptions) -> Result<ReducedBasis> {
    if opts.stride == 0 || !(opts.keep_ratio > 0.0 && opts.keep_ratio <= 1.0) || !(opts.window > 0.0) {
        return Err(Error::invalid("basis options: stride >= 1, 0 < keep_ratio <= 1, window > 0"));
    }
    if seed.len() < opts.stride {
        return Err(Error::invalid(format!(
            "seed trajectory has {} frames, fewer than the stride {}",
            seed.len(),
            opts.stride
        )));
    }
    let window = ((opts.window / seed.h).round() as usize).clamp(1, seed.len());
    let dofs = DofMap::new(seed.num_verts(), immobilized);
    let sampled: Vec<Vec<f64>> = (0..window)
        .step_by(opts.stride)
        .map(|i| dofs.free.iter().map(|&d| seed.frames[i][d]).collect())
        .collect();
    let keep = ((opts.keep_ratio * sampled.len() as f64).ceil() as usize).clamp(1, sampled.len());
    let pca = pca_basis(&sampled, keep)?;
    let n = 3 * seed.num_verts();
    let mut phi = DMatrix::zeros(n, pca.k());
    for (l, &g) in dofs.free.iter().enumerate() {
        for c in 0..pca.k() {
            phi[(g, c)] = pca.basis[(l, c)];
        }
    }
    let mut offset = vec![0.0; n];
    for (i, f) in dofs.fixed.iter().enumerate() {
        if *f {
            offset[i] = seed.frames[0][i];
        }
    }
    Ok(ReducedBasis {
        phi,
        offset,
        tail_energy: pca.tail_energy(),
        sampled_frames: sampled.len(),
    })
}
