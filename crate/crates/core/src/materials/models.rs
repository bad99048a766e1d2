use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::Mlp;
use crate::numerics::{signed_svd, Mat3, SvdFrame, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaterialKind {
    Corotational,
    Stvk,
    Neohookean,
}

/// Isotropic material in SI units (Pa, 1/s, s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    pub kind: MaterialKind,
    pub young: f64,
    pub poisson: f64,
    /// Rayleigh mass coefficient.
    pub alpha: f64,
    /// Rayleigh stiffness coefficient.
    pub beta: f64,
}

impl MaterialParams {
    pub fn new(kind: MaterialKind, young: f64, poisson: f64) -> Result<Self> {
        let p = MaterialParams {
            kind,
            young,
            poisson,
            alpha: 0.0,
            beta: 0.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_damping(mut self, alpha: f64, beta: f64) -> Result<Self> {
        self.alpha = alpha;
        self.beta = beta;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        lame_from_young_poisson(self.young, self.poisson)?;
        if !(self.alpha >= 0.0 && self.alpha.is_finite() && self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidMaterial(format!(
                "Rayleigh coefficients must be finite and >= 0 (alpha={}, beta={})",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }

    pub fn lame(&self) -> (f64, f64) {
        let nu = self.poisson;
        let e = self.young;
        (e / (2.0 * (1.0 + nu)), e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)))
    }

    pub fn has_damping(&self) -> bool {
        self.alpha > 0.0 || self.beta > 0.0
    }

    /// First Piola-Kirchhoff stress of the elastic part of the model.
    pub fn piola(&self, f: &Mat3) -> Result<Mat3> {
        let (mu, lambda) = self.lame();
        match self.kind {
            MaterialKind::Corotational => Ok(corot_world_stress(&signed_svd(f), mu, lambda)),
            MaterialKind::Stvk => Ok(stvk_piola(f, mu, lambda)),
            MaterialKind::Neohookean => neohookean_piola(f, mu, lambda),
        }
    }
}

pub fn lame_from_young_poisson(young: f64, poisson: f64) -> Result<(f64, f64)> {
    if !(young > 0.0 && young.is_finite()) {
        return Err(Error::InvalidMaterial(format!("Young's modulus must be > 0, got {young}")));
    }
    if !(0.0..0.5).contains(&poisson) {
        return Err(Error::InvalidMaterial(format!("Poisson ratio must lie in [0, 0.5), got {poisson}")));
    }
    Ok((
        young / (2.0 * (1.0 + poisson)),
        young * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson)),
    ))
}

/// `P̂ᵢ = 2μ(F̂ᵢ − 1) + λ Σⱼ(F̂ⱼ − 1)`.
pub fn corot_diag_stress(fhat: &Vec3, mu: f64, lambda: f64) -> Vec3 {
    let tr = fhat.iter().map(|s| s - 1.0).sum::<f64>();
    fhat.map(|s| 2.0 * mu * (s - 1.0) + lambda * tr)
}

pub fn corot_world_stress(svd: &SvdFrame, mu: f64, lambda: f64) -> Mat3 {
    svd.from_diagonal(&corot_diag_stress(&svd.sigma, mu, lambda))
}

pub fn stvk_piola(f: &Mat3, mu: f64, lambda: f64) -> Mat3 {
    let e = 0.5 * (f.transpose() * f - Mat3::identity());
    f * (2.0 * mu * e + lambda * e.trace() * Mat3::identity())
}

pub fn neohookean_piola(f: &Mat3, mu: f64, lambda: f64) -> Result<Mat3> {
    let j = f.determinant();
    if !(j > 0.0) {
        return Err(Error::InvertedElement { element: usize::MAX, det: j });
    }
    let f_inv_t = f
        .try_inverse()
        .ok_or(Error::InvertedElement { element: usize::MAX, det: j })?
        .transpose();
    Ok(mu * (f - f_inv_t) + lambda * j.ln() * f_inv_t)
}

/// `diag(Uᵀ Ḟ V)`; off-diagonal entries are dropped.
pub fn rotated_diag_velocity(u: &Mat3, v: &Mat3, fdot: &Mat3) -> Vec3 {
    (u.transpose() * fdot * v).diagonal()
}

/// Per-element SVD frame with the network inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementFrame {
    pub u: Mat3,
    pub v: Mat3,
    pub fhat: Vec3,
    pub fdot_hat: Vec3,
}

impl ElementFrame {
    pub fn new(f: &Mat3, fdot: &Mat3) -> Self {
        let svd = signed_svd(f);
        ElementFrame {
            u: svd.u,
            v: svd.v,
            fhat: svd.sigma,
            fdot_hat: rotated_diag_velocity(&svd.u, &svd.v, fdot),
        }
    }

    pub fn svd(&self) -> SvdFrame {
        SvdFrame {
            u: self.u,
            sigma: self.fhat,
            v: self.v,
        }
    }

    /// `U diag(d) Vᵀ`.
    pub fn to_world(&self, d: &Vec3) -> Mat3 {
        self.u * Mat3::from_diagonal(d) * self.v.transpose()
    }
}

/// `P_n = U diag(P̂(F̂) + N(F̂, F̂̇)) Vᵀ`; with no network `N ≡ 0`.
pub fn composed_world_stress(frame: &ElementFrame, mu: f64, lambda: f64, net: Option<&Mlp>) -> Mat3 {
    let mut d = corot_diag_stress(&frame.fhat, mu, lambda);
    if let Some(net) = net {
        d += net.forward(&frame.fhat, &frame.fdot_hat);
    }
    frame.to_world(&d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &Mat3, b: &Mat3, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn lame_examples() {
        let (mu, lambda) = lame_from_young_poisson(5e9, 0.43).unwrap();
        assert!((mu - 5e9 / 2.86).abs() < 1.0);
        assert!((mu / 1.7483e9 - 1.0).abs() < 1e-4);
        assert!((lambda / 1.0739e10 - 1.0).abs() < 1e-4);
        let nu = 0.3;
        let (mu, _) = lame_from_young_poisson(2.0 * (1.0 + nu), nu).unwrap();
        assert!((mu - 1.0).abs() < 1e-15);
        assert_eq!(lame_from_young_poisson(4.0, 0.0).unwrap(), (2.0, 0.0));
        assert!(lame_from_young_poisson(1.0, 0.5).is_err());
        assert!(lame_from_young_poisson(1.0, -0.1).is_err());
        assert!(lame_from_young_poisson(0.0, 0.3).is_err());
    }

    #[test]
    fn corot_diag_examples() {
        assert_eq!(corot_diag_stress(&Vec3::repeat(1.0), 3.0, 4.0), Vec3::zeros());
        let p = corot_diag_stress(&Vec3::new(1.1, 1.0, 0.9), 1.0, 1.0);
        assert!((p - Vec3::new(0.2, 0.0, -0.2)).norm() < 1e-12);
        let p = corot_diag_stress(&Vec3::repeat(1.1), 0.0, 1.0);
        assert!((p - Vec3::repeat(0.3)).norm() < 1e-12);
    }

    #[test]
    fn stvk_examples() {
        assert_eq!(stvk_piola(&Mat3::identity(), 1.0, 1.0), Mat3::zeros());
        let p = stvk_piola(&Mat3::from_diagonal(&Vec3::new(1.1, 1.0, 1.0)), 1.0, 1.0);
        assert!(close(&p, &Mat3::from_diagonal(&Vec3::new(0.3465, 0.105, 0.105)), 1e-12));
    }

    #[test]
    fn neohookean_examples() {
        assert!(neohookean_piola(&Mat3::identity(), 1.0, 1.0).unwrap().norm() < 1e-15);
        let p = neohookean_piola(&Mat3::from_diagonal(&Vec3::new(2.0, 1.0, 1.0)), 1.0, 0.0).unwrap();
        assert!(close(&p, &Mat3::from_diagonal(&Vec3::new(1.5, 0.0, 0.0)), 1e-12));
        let inverted = Mat3::from_diagonal(&Vec3::new(-1.0, 1.0, 1.0));
        assert!(matches!(neohookean_piola(&inverted, 1.0, 1.0), Err(Error::InvertedElement { .. })));
    }

    #[test]
    fn rotated_velocity_examples() {
        let i = Mat3::identity();
        assert_eq!(rotated_diag_velocity(&i, &i, &Mat3::zeros()), Vec3::zeros());
        let d = Mat3::from_diagonal(&Vec3::new(1.0, -2.0, 3.0));
        assert_eq!(rotated_diag_velocity(&i, &i, &d), Vec3::new(1.0, -2.0, 3.0));
        let rz = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let fdot = Mat3::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0);
        assert_eq!(rotated_diag_velocity(&rz, &i, &fdot), (rz.transpose() * fdot).diagonal());
    }

    #[test]
    fn composed_stress_without_net_is_nominal() {
        let frame = ElementFrame::new(&Mat3::identity(), &Mat3::zeros());
        assert!(composed_world_stress(&frame, 1.0, 2.0, None).norm() < 1e-15);
        let f = Mat3::from_diagonal(&Vec3::new(1.2, 1.0, 0.9));
        let frame = ElementFrame::new(&f, &Mat3::zeros());
        let p = composed_world_stress(&frame, 1.0, 2.0, None);
        let expected = Mat3::from_diagonal(&corot_diag_stress(&Vec3::new(1.2, 1.0, 0.9), 1.0, 2.0));
        assert!(close(&p, &expected, 1e-12));
        let params = MaterialParams {
            kind: MaterialKind::Corotational,
            young: 6.0,
            poisson: 0.25,
            alpha: 0.0,
            beta: 0.0,
        };
        let (mu, lambda) = params.lame();
        let g = Mat3::new(1.1, 0.2, -0.1, 0.05, 0.9, 0.3, -0.2, 0.1, 1.05);
        let frame = ElementFrame::new(&g, &Mat3::zeros());
        assert!(close(&composed_world_stress(&frame, mu, lambda, None), &params.piola(&g).unwrap(), 1e-12));
    }

    #[test]
    fn damping_validation() {
        let p = MaterialParams::new(MaterialKind::Stvk, 1.0, 0.3).unwrap();
        assert!(p.with_damping(0.02, 0.1).unwrap().has_damping());
        assert!(p.with_damping(-1.0, 0.0).is_err());
        assert!(!p.has_damping());
    }
}
