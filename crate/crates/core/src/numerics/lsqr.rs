//! LSQR (Paige & Saunders) for least-squares problems of any shape.
//!
//! Started from `x = 0`, the iterates stay in the row space of `A`, so the
//! limit is the minimum-norm least-squares solution. `A^T A` is never formed.

use super::sparse::LinearOperator;
use super::{norm, scale};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsqrOptions {
    /// Stop once `||A^T (A x - b)|| <= tol ||A^T b||`.
    pub tol: f64,
    /// Hard iteration cap; `None` means ten times the column count.
    pub max_iter: Option<usize>,
}

impl Default for LsqrOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LsqrOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `||A x - b||`, as estimated by the recurrence.
    pub residual_norm: f64,
    /// `||A^T (A x - b)|| / ||A^T b||`, estimated.
    pub normal_residual: f64,
}

/// Runs LSQR and reports how far it got, converged or not.
pub fn lsqr<A: LinearOperator + ?Sized>(a: &A, b: &[f64], opts: &LsqrOptions) -> LsqrOutcome {
    let (m, n) = (a.nrows(), a.ncols());
    assert_eq!(b.len(), m, "rhs length must match operator rows");
    let max_iter = opts.max_iter.unwrap_or(10 * n.max(1));
    let mut x = vec![0.0; n];

    let mut u = b.to_vec();
    let mut beta = norm(&u);
    let mut v = vec![0.0; n];
    let mut alpha = 0.0;
    if beta > 0.0 {
        scale(1.0 / beta, &mut u);
        a.apply_transpose(&u, &mut v);
        alpha = norm(&v);
    }
    let atb_norm = alpha * beta;
    // A^T b numerically zero: b is orthogonal to range(A)
    let tiny = f64::EPSILON * (m.max(n) as f64);
    if beta == 0.0 || alpha <= tiny * op_scale_estimate(a, &v, alpha) {
        return LsqrOutcome {
            x,
            iterations: 0,
            converged: true,
            residual_norm: beta,
            normal_residual: 0.0,
        };
    }
    scale(1.0 / alpha, &mut v);

    let mut w = v.clone();
    let mut phi_bar = beta;
    let mut rho_bar = alpha;
    let mut av = vec![0.0; m];
    let mut atu = vec![0.0; n];
    let mut normal_res = 1.0;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iter {
        iterations += 1;
        a.apply(&v, &mut av);
        for i in 0..m {
            u[i] = av[i] - alpha * u[i];
        }
        beta = norm(&u);
        if beta > 0.0 {
            scale(1.0 / beta, &mut u);
            a.apply_transpose(&u, &mut atu);
            for i in 0..n {
                v[i] = atu[i] - beta * v[i];
            }
            alpha = norm(&v);
            if alpha > 0.0 {
                scale(1.0 / alpha, &mut v);
            }
        } else {
            alpha = 0.0;
        }

        let rho = rho_bar.hypot(beta);
        let c = rho_bar / rho;
        let s = beta / rho;
        let theta = s * alpha;
        rho_bar = -c * alpha;
        let phi = c * phi_bar;
        phi_bar *= s;

        let t1 = phi / rho;
        let t2 = -theta / rho;
        for i in 0..n {
            x[i] += t1 * w[i];
            w[i] = v[i] + t2 * w[i];
        }

        normal_res = phi_bar * alpha * c.abs() / atb_norm;
        if normal_res <= opts.tol || alpha == 0.0 || beta == 0.0 {
            converged = true;
            break;
        }
    }

    LsqrOutcome {
        x,
        iterations,
        converged,
        residual_norm: phi_bar,
        normal_residual: normal_res,
    }
}

/// Rough `||A||` from the first Lanczos vector, used only to decide when
/// `A^T b` counts as zero.
fn op_scale_estimate<A: LinearOperator + ?Sized>(a: &A, v: &[f64], alpha: f64) -> f64 {
    if alpha == 0.0 {
        return 1.0;
    }
    let unit: Vec<f64> = v.iter().map(|x| x / alpha).collect();
    let mut av = vec![0.0; a.nrows()];
    a.apply(&unit, &mut av);
    norm(&av).max(f64::MIN_POSITIVE)
}

/// Minimum-norm least-squares solution of `A x ~ b`.
///
/// Fails with [`Error::NotConverged`] when the iteration cap is reached
/// before `||A^T (A x - b)|| <= tol ||A^T b||`.
pub fn least_norm_solve<A: LinearOperator + ?Sized>(a: &A, b: &[f64], tol: f64) -> Result<Vec<f64>> {
    if !b.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("least-squares right-hand side".into()));
    }
    let out = lsqr(a, b, &LsqrOptions { tol, max_iter: None });
    if out.converged {
        Ok(out.x)
    } else {
        Err(Error::NotConverged {
            method: "lsqr",
            iterations: out.iterations,
            residual: out.normal_residual,
        })
    }
}
