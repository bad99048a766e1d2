use super::dense::{Mat3, Vec3};

/// Rotation-only SVD `F = U diag(sigma) V^T` with `det U = det V = +1`.
///
/// Singular values are ordered by decreasing magnitude. When `det F < 0` the
/// smallest entry carries the reflection and is the only negative one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvdFrame {
    pub u: Mat3,
    pub sigma: Vec3,
    pub v: Mat3,
}

impl SvdFrame {
    pub fn reconstruct(&self) -> Mat3 {
        self.u * Mat3::from_diagonal(&self.sigma) * self.v.transpose()
    }

    /// Rotates a world-frame matrix into the frame: `U^T M V`.
    pub fn to_frame(&self, m: &Mat3) -> Mat3 {
        self.u.transpose() * m * self.v
    }

    /// `U M V^T`.
    pub fn from_frame(&self, m: &Mat3) -> Mat3 {
        self.u * m * self.v.transpose()
    }

    pub fn from_diagonal(&self, d: &Vec3) -> Mat3 {
        self.u * Mat3::from_diagonal(d) * self.v.transpose()
    }
}

pub fn signed_svd(f: &Mat3) -> SvdFrame {
    let svd = f.svd(true, true);
    let u_raw = svd.u.expect("3x3 svd always yields U");
    let v_raw = svd.v_t.expect("3x3 svd always yields V^T").transpose();
    let s_raw = svd.singular_values;

    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| s_raw[b].total_cmp(&s_raw[a]));

    let mut u = Mat3::zeros();
    let mut v = Mat3::zeros();
    let mut sigma = Vec3::zeros();
    for (dst, &src) in order.iter().enumerate() {
        u.set_column(dst, &u_raw.column(src));
        v.set_column(dst, &v_raw.column(src));
        sigma[dst] = s_raw[src];
    }

    if u.determinant() < 0.0 {
        let c = -u.column(2);
        u.set_column(2, &c);
        sigma[2] = -sigma[2];
    }
    if v.determinant() < 0.0 {
        let c = -v.column(2);
        v.set_column(2, &c);
        sigma[2] = -sigma[2];
    }
    SvdFrame { u, sigma, v }
}
