//! Linear algebra kernels: small dense 3x3 helpers, the signed SVD used by
//! the principal-stretch models, compressed sparse storage, iterative
//! solvers and the PCA basis used for trajectory reduction.

mod dense;
mod lsqr;
mod pca;
mod solvers;
mod sparse;
mod svd;

pub use dense::{from_vec9, mat3_is_finite, to_vec9, Mat3, Mat9, Vec3, Vec9};
pub use lsqr::{least_norm_solve, lsqr, LsqrOptions, LsqrOutcome};
pub use pca::{pca_basis, PcaBasis};
pub use solvers::{solve_linear, SolverOptions};
pub use sparse::{CsrMatrix, LinearOperator, TripletBuilder};
pub use svd::{signed_svd, SvdFrame};

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn scale(alpha: f64, x: &mut [f64]) {
    for xi in x.iter_mut() {
        *xi *= alpha;
    }
}
