use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Orthonormal basis from an uncentered PCA of stacked frame vectors.
#[derive(Debug, Clone)]
pub struct PcaBasis {
    /// `dim x k`, columns ordered by decreasing singular value.
    pub basis: DMatrix<f64>,
    /// All singular values of the frame matrix, descending.
    pub singular_values: Vec<f64>,
    /// Number of singular values above the rank threshold.
    pub numerical_rank: usize,
}

impl PcaBasis {
    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn k(&self) -> usize {
        self.basis.ncols()
    }

    /// `||X - Phi Phi^T X||_F` for the truncation kept here.
    pub fn tail_energy(&self) -> f64 {
        self.singular_values[self.k().min(self.singular_values.len())..]
            .iter()
            .map(|s| s * s)
            .sum::<f64>()
            .sqrt()
    }
}

/// Top-`keep` left singular vectors of the `dim x frames` matrix.
///
/// If fewer than `keep` directions are numerically present the basis is
/// truncated to the numerical rank and a warning is logged. Each column is
/// signed so that its first non-negligible entry is positive.
pub fn pca_basis(frames: &[Vec<f64>], keep: usize) -> Result<PcaBasis> {
    let count = frames.len();
    if count == 0 || keep == 0 {
        return Err(Error::invalid("pca_basis needs at least one frame and keep >= 1"));
    }
    if keep > count {
        return Err(Error::invalid(format!("keep = {keep} exceeds the {count} frames")));
    }
    let dim = frames[0].len();
    if frames.iter().any(|f| f.len() != dim) {
        return Err(Error::ShapeMismatch("pca frames differ in length".into()));
    }
    if frames.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("pca frames".into()));
    }
    let x = DMatrix::from_fn(dim, count, |i, j| frames[j][i]);
    let svd = x.svd(true, false);
    let u = svd.u.expect("svd with compute_u");
    let s = svd.singular_values;

    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let singular_values: Vec<f64> = order.iter().map(|&i| s[i]).collect();
    let smax = singular_values.first().copied().unwrap_or(0.0);
    let threshold = smax * 1e-12 * (dim.max(count) as f64);
    let numerical_rank = singular_values.iter().filter(|&&v| v > threshold).count();

    let k = if keep > numerical_rank {
        log::warn!(
            "pca_basis: requested {keep} columns but numerical rank is {numerical_rank}; truncating"
        );
        numerical_rank.max(1)
    } else {
        keep
    };

    let mut basis = DMatrix::zeros(dim, k);
    for (c, &src) in order.iter().take(k).enumerate() {
        let mut col = u.column(src).into_owned();
        let cmax = col.amax();
        if let Some(first) = col.iter().find(|v| v.abs() > 1e-8 * cmax) {
            if *first < 0.0 {
                col.neg_mut();
            }
        }
        basis.set_column(c, &col);
    }
    Ok(PcaBasis {
        basis,
        singular_values,
        numerical_rank,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn orthonormality_error(b: &DMatrix<f64>) -> f64 {
        (b.transpose() * b - DMatrix::identity(b.ncols(), b.ncols())).amax()
    }

    #[test]
    fn repeated_frame_gives_single_direction() {
        let q = vec![3.0, -4.0, 0.0, 12.0];
        let frames = vec![q.clone(); 5];
        let pca = pca_basis(&frames, 3).unwrap();
        assert_eq!(pca.k(), 1);
        let n = 13.0;
        for (b, qi) in pca.basis.column(0).iter().zip(&q) {
            assert!((b - qi / n).abs() < 1e-14);
        }
    }

    #[test]
    fn two_dimensional_subspace_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let frames: Vec<Vec<f64>> = (0..10)
            .map(|_| {
                let (s, t): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                a.iter().zip(&b).map(|(x, y)| s * x + t * y).collect()
            })
            .collect();
        let pca = pca_basis(&frames, 2).unwrap();
        // Projector onto span{a, b} from a QR of the generators.
        let g = DMatrix::from_fn(8, 2, |i, j| if j == 0 { a[i] } else { b[i] });
        let q = g.qr().q();
        let p_ref = &q * q.transpose();
        let p = &pca.basis * pca.basis.transpose();
        assert!((p - p_ref).amax() < 1e-10);
        assert!(orthonormality_error(&pca.basis) < 1e-10);
    }

    #[test]
    fn sign_convention_first_entry_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let frames: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..9).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let pca = pca_basis(&frames, 4).unwrap();
        for c in 0..pca.k() {
            let col = pca.basis.column(c);
            let first = col.iter().find(|v| v.abs() > 1e-8).unwrap();
            assert!(*first > 0.0);
        }
    }

    #[test]
    fn reconstruction_error_non_increasing_in_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let frames: Vec<Vec<f64>> = (0..12)
            .map(|_| (0..15).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let x = DMatrix::from_fn(15, 12, |i, j| frames[j][i]);
        let mut prev = f64::INFINITY;
        for k in 1..=12 {
            let pca = pca_basis(&frames, k).unwrap();
            assert!(orthonormality_error(&pca.basis) < 1e-10);
            let resid = (&x - &pca.basis * (pca.basis.transpose() * &x)).norm();
            assert!(resid <= prev + 1e-12);
            assert!((resid - pca.tail_energy()).abs() < 1e-9);
            prev = resid;
        }
    }

    #[test]
    fn keep_larger_than_frame_count_is_rejected() {
        assert!(pca_basis(&[vec![1.0, 2.0]], 2).is_err());
    }
}
