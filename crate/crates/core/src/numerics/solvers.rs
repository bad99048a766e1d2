use super::sparse::{CsrMatrix, LinearOperator};
use super::{axpy, dot, norm};
use crate::error::{Error, Result};

/// Tolerances for [`solve_linear`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Relative residual target `||Ax - b|| <= tol ||b||`.
    pub tol: f64,
    /// Iteration cap as a multiple of the system dimension.
    pub max_iter_factor: usize,
    /// Krylov subspace size before GMRES restarts.
    pub restart: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter_factor: 10,
            restart: 120,
        }
    }
}

/// Solves the square system `A x = b`.
///
/// Symmetric matrices go through Jacobi-preconditioned conjugate gradients;
/// if CG detects indefiniteness, or the matrix is not symmetric, restarted
/// GMRES with the same preconditioner takes over. Small systems on which
/// GMRES stagnates fall back to a dense LU factorization.
const DENSE_FALLBACK_DIM: usize = 3000;

pub fn solve_linear(a: &CsrMatrix, b: &[f64], opts: &SolverOptions) -> Result<Vec<f64>> {
    let (n, m) = a.shape();
    if n != m {
        return Err(Error::ShapeMismatch(format!("solve_linear needs a square matrix, got {n}x{m}")));
    }
    if b.len() != n {
        return Err(Error::ShapeMismatch(format!("rhs has length {} for a {n}x{n} system", b.len())));
    }
    if !b.iter().all(|v| v.is_finite()) || !a.values_are_finite() {
        return Err(Error::NonFinite("linear system".into()));
    }
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let max_iter = opts.max_iter_factor.max(1) * n.max(1);
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|d| if d.abs() > 0.0 { 1.0 / d.abs() } else { 1.0 })
        .collect();

    if a.is_symmetric(1e-13) {
        if let Some(x) = pcg(a, b, &inv_diag, opts.tol, max_iter) {
            return Ok(x);
        }
    }
    let x = gmres(a, b, &inv_diag, opts.tol, max_iter, opts.restart.max(1).min(n));
    let res = relative_residual(a, &x, b, bnorm);
    if res <= opts.tol {
        return Ok(x);
    }
    if n <= DENSE_FALLBACK_DIM {
        if let Some(y) = a.to_dense().lu().solve(&nalgebra::DVector::from_column_slice(b)) {
            let y: Vec<f64> = y.iter().copied().collect();
            let dres = relative_residual(a, &y, b, bnorm);
            if dres <= opts.tol {
                log::debug!("gmres stagnated at {res:.2e}; dense LU reached {dres:.2e}");
                return Ok(y);
            }
        }
    }
    {
        Err(Error::NotConverged {
            method: "gmres",
            iterations: max_iter,
            residual: res,
        })
    }
}

fn relative_residual(a: &CsrMatrix, x: &[f64], b: &[f64], bnorm: f64) -> f64 {
    let ax = a.mul_vec(x);
    let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    norm(&r) / bnorm
}

/// Returns `None` on breakdown (indefinite matrix) or non-convergence.
fn pcg(a: &CsrMatrix, b: &[f64], inv_diag: &[f64], tol: f64, max_iter: usize) -> Option<Vec<f64>> {
    let n = b.len();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(inv_diag).map(|(ri, d)| ri * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    for _ in 0..max_iter {
        a.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return None;
        }
        let alpha = rz / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        if norm(&r) <= tol * bnorm {
            // the recursive residual drifts; confirm with the true one
            if relative_residual(a, &x, b, bnorm) <= tol {
                return Some(x);
            }
            r = b.iter().zip(a.mul_vec(&x)).map(|(bi, ai)| bi - ai).collect();
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    None
}

/// Right-preconditioned restarted GMRES with modified Gram-Schmidt.
fn gmres(
    a: &CsrMatrix,
    b: &[f64],
    inv_diag: &[f64],
    tol: f64,
    max_iter: usize,
    restart: usize,
) -> Vec<f64> {
    let n = b.len();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    let mut total = 0;
    let mut w = vec![0.0; n];
    let mut zbuf = vec![0.0; n];
    while total < max_iter {
        let ax = a.mul_vec(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm(&r);
        if beta <= tol * bnorm {
            break;
        }
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(restart + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        let mut h = vec![vec![0.0; restart]; restart + 1];
        let mut cs = vec![0.0; restart];
        let mut sn = vec![0.0; restart];
        let mut g = vec![0.0; restart + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..restart {
            for i in 0..n {
                zbuf[i] = basis[k][i] * inv_diag[i];
            }
            a.apply(&zbuf, &mut w);
            for (j, q) in basis.iter().enumerate() {
                let hj = dot(&w, q);
                h[j][k] = hj;
                axpy(-hj, q, &mut w);
            }
            let hn = norm(&w);
            h[k + 1][k] = hn;
            for j in 0..k {
                let t = cs[j] * h[j][k] + sn[j] * h[j + 1][k];
                h[j + 1][k] = -sn[j] * h[j][k] + cs[j] * h[j + 1][k];
                h[j][k] = t;
            }
            let denom = h[k][k].hypot(h[k + 1][k]);
            if denom == 0.0 {
                cs[k] = 1.0;
                sn[k] = 0.0;
            } else {
                cs[k] = h[k][k] / denom;
                sn[k] = h[k + 1][k] / denom;
            }
            h[k][k] = cs[k] * h[k][k] + sn[k] * h[k + 1][k];
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            total += 1;
            if g[k + 1].abs() <= 0.5 * tol * bnorm || hn == 0.0 || total >= max_iter {
                break;
            }
            basis.push(w.iter().map(|v| v / hn).collect());
        }
        // back substitution on the triangular Hessenberg factor
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= h[i][j] * y[j];
            }
            y[i] = if h[i][i] != 0.0 { s / h[i][i] } else { 0.0 };
        }
        for (j, yj) in y.iter().enumerate() {
            for i in 0..n {
                x[i] += yj * basis[j][i] * inv_diag[i];
            }
        }
    }
    x
}
