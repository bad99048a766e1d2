use serde::{Deserialize, Serialize};

use super::models::{corot_diag_stress, MaterialKind, MaterialParams};
use crate::error::Result;
use crate::numerics::{from_vec9, signed_svd, to_vec9, Mat3, Mat9, SvdFrame, Vec3};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    #[default]
    FiniteDifference,
    Analytic,
}

const FD_REL_STEP: f64 = 1e-6;

/// `∂vec(P)/∂vec(F)` of the elastic part of `params` at `f` (column-major vec).
pub fn stress_gradient(params: &MaterialParams, f: &Mat3, mode: GradientMode) -> Result<Mat9> {
    match mode {
        GradientMode::FiniteDifference => {
            let h = FD_REL_STEP * f.norm().max(1.0);
            let mut out = Mat9::zeros();
            for b in 0..9 {
                let mut e = [0.0; 9];
                e[b] = h;
                let d = from_vec9(&e);
                let plus = params.piola(&(f + d))?;
                let minus = params.piola(&(f - d))?;
                out.set_column(b, &to_vec9(&((plus - minus) / (2.0 * h))));
            }
            Ok(out)
        }
        GradientMode::Analytic => analytic(params, f),
    }
}

fn analytic(params: &MaterialParams, f: &Mat3) -> Result<Mat9> {
    let (mu, lambda) = params.lame();
    let mut out = Mat9::zeros();
    match params.kind {
        MaterialKind::Corotational => {
            let svd = signed_svd(f);
            let jac = PrincipalStressJacobian {
                p: corot_diag_stress(&svd.sigma, mu, lambda),
                dp_dsigma: 2.0 * mu * Mat3::identity() + Mat3::repeat(lambda),
                dp_dfdot: Mat3::zeros(),
            };
            out = principal_stress_differential(&svd, &Mat3::zeros(), &jac, true).0;
        }
        MaterialKind::Stvk => {
            let e = 0.5 * (f.transpose() * f - Mat3::identity());
            let s = 2.0 * mu * e + lambda * e.trace() * Mat3::identity();
            for b in 0..9 {
                let df = unit(b);
                let de = 0.5 * (df.transpose() * f + f.transpose() * df);
                let ds = 2.0 * mu * de + lambda * de.trace() * Mat3::identity();
                out.set_column(b, &to_vec9(&(df * s + f * ds)));
            }
        }
        MaterialKind::Neohookean => {
            // Validates det > 0.
            params.piola(f)?;
            let f_inv = f.try_inverse().expect("checked by piola");
            let f_inv_t = f_inv.transpose();
            let ln_j = f.determinant().ln();
            for b in 0..9 {
                let df = unit(b);
                let d_inv_t = -f_inv_t * df.transpose() * f_inv_t;
                let d_ln_j = (f_inv * df).trace();
                let dp = mu * (df - d_inv_t) + lambda * (d_ln_j * f_inv_t + ln_j * d_inv_t);
                out.set_column(b, &to_vec9(&dp));
            }
        }
    }
    Ok(out)
}

fn unit(b: usize) -> Mat3 {
    let mut e = [0.0; 9];
    e[b] = 1.0;
    from_vec9(&e)
}

/// Diagonal stress `p` of a principal-stretch model together with its
/// derivatives with respect to the stretches and the rotated strain rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrincipalStressJacobian {
    pub p: Vec3,
    pub dp_dsigma: Mat3,
    pub dp_dfdot: Mat3,
}

const REPEAT_TOL: f64 = 1e-9;

/// Differentials of `P = U diag(p(F̂, F̂̇)) Vᵀ` with respect to `F` and `Ḟ`.
///
/// With `rotation_terms` the variation of `U` and `V` is included (both in
/// the rotated output and in `F̂̇ = diag(Uᵀ Ḟ V)`); without it the frame is
/// frozen and only the diagonal path is differentiated.
pub fn principal_stress_differential(
    svd: &SvdFrame,
    fdot: &Mat3,
    jac: &PrincipalStressJacobian,
    rotation_terms: bool,
) -> (Mat9, Mat9) {
    let s = svd.sigma;
    let p = jac.p;
    let g = svd.to_frame(fdot);
    let scale = s.amax().max(1.0);

    // Divided differences with their repeated-value limits.
    let mut diff = Mat3::zeros();
    let mut sum = Mat3::zeros();
    let mut inv_diff = Mat3::zeros();
    let mut inv_sum = Mat3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            if i == j {
                continue;
            }
            let d = s[i] - s[j];
            if d.abs() > REPEAT_TOL * scale {
                diff[(i, j)] = (p[i] - p[j]) / d;
                inv_diff[(i, j)] = 1.0 / d;
            } else {
                let js = &jac.dp_dsigma;
                diff[(i, j)] = 0.5 * (js[(i, i)] - js[(i, j)] + js[(j, j)] - js[(j, i)]);
            }
            let mut t = s[i] + s[j];
            if t.abs() < REPEAT_TOL * scale {
                t = REPEAT_TOL * scale * if t < 0.0 { -1.0 } else { 1.0 };
            }
            sum[(i, j)] = (p[i] + p[j]) / t;
            inv_sum[(i, j)] = 1.0 / t;
        }
    }

    let mut dp_df = Mat9::zeros();
    let mut dp_dfdot = Mat9::zeros();
    for b in 0..9 {
        let a = svd.to_frame(&unit(b));
        let mut dfdot_hat = Vec3::zeros();
        let mut frame = Mat3::zeros();
        if rotation_terms {
            let mut om_u = Mat3::zeros();
            let mut om_v = Mat3::zeros();
            for i in 0..3 {
                for j in 0..3 {
                    if i == j {
                        continue;
                    }
                    let sy = 0.5 * (a[(i, j)] + a[(j, i)]);
                    let sk = 0.5 * (a[(i, j)] - a[(j, i)]);
                    frame[(i, j)] = sy * diff[(i, j)] + sk * sum[(i, j)];
                    om_u[(i, j)] = -sy * inv_diff[(i, j)] + sk * inv_sum[(i, j)];
                    om_v[(i, j)] = -sy * inv_diff[(i, j)] - sk * inv_sum[(i, j)];
                }
            }
            let dg = -om_u * g + g * om_v;
            dfdot_hat = dg.diagonal();
        }
        let dp = jac.dp_dsigma * a.diagonal() + jac.dp_dfdot * dfdot_hat;
        frame.set_diagonal(&dp);
        dp_df.set_column(b, &to_vec9(&svd.from_frame(&frame)));

        let dp_v = jac.dp_dfdot * a.diagonal();
        dp_dfdot.set_column(b, &to_vec9(&svd.from_diagonal(&dp_v)));
    }
    (dp_df, dp_dfdot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::materials::MaterialKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(kind: MaterialKind) -> MaterialParams {
        MaterialParams::new(kind, 10.0, 0.3).unwrap()
    }

    fn random_f(rng: &mut ChaCha8Rng) -> Mat3 {
        let r = nalgebra::Rotation3::from_scaled_axis(Vec3::from_fn(|_, _| rng.random_range(-2.0..2.0)));
        Mat3::identity() + Mat3::from_fn(|_, _| rng.random_range(-0.3..0.3)) + (r.into_inner() - Mat3::identity())
    }

    #[test]
    fn stvk_uniaxial_directional_derivative() {
        let p = MaterialParams {
            kind: MaterialKind::Stvk,
            young: 1.0,
            poisson: 0.0,
            alpha: 0.0,
            beta: 0.0,
        };
        // Any (young, poisson) pair yields mu=lambda=1 only through lame; build
        // the expectation from the pair instead.
        let (mu, lambda) = p.lame();
        let k = stress_gradient(&p, &Mat3::identity(), GradientMode::FiniteDifference).unwrap();
        let col = from_vec9(k.column(0).as_slice());
        let expected = Mat3::from_diagonal(&Vec3::new(2.0 * mu + lambda, lambda, lambda));
        assert!((col - expected).norm() < 1e-8);

        let p = MaterialParams::new(MaterialKind::Stvk, 2.5, 0.25).unwrap();
        let (mu, lambda) = p.lame();
        assert!((mu - 1.0).abs() < 1e-12 && (lambda - 1.0).abs() < 1e-12);
        let k = stress_gradient(&p, &Mat3::identity(), GradientMode::FiniteDifference).unwrap();
        let col = from_vec9(k.column(0).as_slice());
        assert!((col - Mat3::from_diagonal(&Vec3::new(3.0, 1.0, 1.0))).norm() < 1e-8);
    }

    #[test]
    fn corotational_at_rest_is_linear_elasticity() {
        let p = params(MaterialKind::Corotational);
        let (mu, lambda) = p.lame();
        let mut linear = Mat9::zeros();
        for b in 0..9 {
            let d = unit(b);
            let dp = mu * (d + d.transpose()) + lambda * d.trace() * Mat3::identity();
            linear.set_column(b, &to_vec9(&dp));
        }
        for mode in [GradientMode::FiniteDifference, GradientMode::Analytic] {
            let k = stress_gradient(&p, &Mat3::identity(), mode).unwrap();
            assert!((k - linear).norm() < 1e-6 * linear.norm(), "{mode:?}");
            assert!((k - k.transpose()).norm() < 1e-6 * k.norm());
            let eig = k.symmetric_eigen().eigenvalues;
            assert!(eig.min() > -1e-6 * k.norm(), "{eig}");
        }
    }

    #[test]
    fn analytic_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for kind in [MaterialKind::Corotational, MaterialKind::Stvk, MaterialKind::Neohookean] {
            let p = params(kind);
            for _ in 0..100 {
                let f = random_f(&mut rng);
                if kind == MaterialKind::Neohookean && f.determinant() <= 0.1 {
                    continue;
                }
                let fd = stress_gradient(&p, &f, GradientMode::FiniteDifference).unwrap();
                let an = stress_gradient(&p, &f, GradientMode::Analytic).unwrap();
                let rel = (fd - an).norm() / fd.norm();
                assert!(rel < 1e-4, "{kind:?} rel {rel:e}");
            }
        }
    }

    #[test]
    fn repeated_singular_values_stay_finite() {
        let p = params(MaterialKind::Corotational);
        let r = nalgebra::Rotation3::from_euler_angles(0.1, 0.2, 0.3).into_inner();
        for f in [Mat3::identity(), r, r * Mat3::from_diagonal(&Vec3::new(1.2, 1.2, 0.8))] {
            let fd = stress_gradient(&p, &f, GradientMode::FiniteDifference).unwrap();
            let an = stress_gradient(&p, &f, GradientMode::Analytic).unwrap();
            assert!((fd - an).norm() < 1e-4 * fd.norm());
        }
    }

    #[test]
    fn frame_derivatives_of_rotated_rate() {
        // Directional derivative of diag(Uᵀ Ḟ V) composed through a linear
        // stand-in p = Jv F̂̇ checked against finite differences of the map.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let jv = Mat3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let eval = |f: &Mat3, fdot: &Mat3| {
            let svd = signed_svd(f);
            let fh = (svd.u.transpose() * fdot * svd.v).diagonal();
            svd.from_diagonal(&(jv * fh))
        };
        for _ in 0..20 {
            let f = random_f(&mut rng);
            let fdot = Mat3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let svd = signed_svd(&f);
            let jac = PrincipalStressJacobian {
                p: jv * (svd.u.transpose() * fdot * svd.v).diagonal(),
                dp_dsigma: Mat3::zeros(),
                dp_dfdot: jv,
            };
            let (dx, dv) = principal_stress_differential(&svd, &fdot, &jac, true);
            let h = 1e-6;
            for b in 0..9 {
                let e = unit(b) * h;
                let fx = (eval(&(f + e), &fdot) - eval(&(f - e), &fdot)) / (2.0 * h);
                let fv = (eval(&f, &(fdot + e)) - eval(&f, &(fdot - e))) / (2.0 * h);
                assert!((to_vec9(&fx) - dx.column(b)).norm() < 1e-5 * dx.norm().max(1.0));
                assert!((to_vec9(&fv) - dv.column(b)).norm() < 1e-5 * dv.norm().max(1.0));
            }
        }
    }
}
