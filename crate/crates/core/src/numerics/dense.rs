use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

pub type Mat3 = Matrix3<f64>;
pub type Vec3 = Vector3<f64>;
/// Derivative of one 3x3 matrix with respect to another, acting on
/// column-major `vec` representations.
pub type Mat9 = SMatrix<f64, 9, 9>;
pub type Vec9 = SVector<f64, 9>;

/// Column-major flattening, matching nalgebra storage order.
pub fn to_vec9(m: &Mat3) -> Vec9 {
    Vec9::from_column_slice(m.as_slice())
}

pub fn from_vec9(v: &[f64]) -> Mat3 {
    Mat3::from_column_slice(&v[..9])
}

pub fn mat3_is_finite(m: &Mat3) -> bool {
    m.iter().all(|x| x.is_finite())
}
