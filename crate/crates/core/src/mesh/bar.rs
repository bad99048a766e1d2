use super::TetMesh;
use crate::error::{Error, Result};
use crate::numerics::Vec3;

/// Axis-aligned boundary faces of a procedural bar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarFace {
    XMin,
    XMax,
    YMin,
    YMax,
    ZMin,
    ZMax,
}

impl BarFace {
    pub fn axis(self) -> usize {
        match self {
            BarFace::XMin | BarFace::XMax => 0,
            BarFace::YMin | BarFace::YMax => 1,
            BarFace::ZMin | BarFace::ZMax => 2,
        }
    }

    pub fn is_max(self) -> bool {
        matches!(self, BarFace::XMax | BarFace::YMax | BarFace::ZMax)
    }

    /// Vertices lying on this face of the mesh bounding box.
    pub fn vertices(self, mesh: &TetMesh) -> Vec<usize> {
        let (lo, hi) = mesh.bounding_box();
        let a = self.axis();
        let target = if self.is_max() { hi[a] } else { lo[a] };
        let tol = 1e-9 * (hi - lo).norm();
        mesh.rest()
            .iter()
            .enumerate()
            .filter(|(_, p)| (p[a] - target).abs() <= tol)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Regular `nx x ny x nz` grid of cubes over `[0, size]`, each split into six
/// tetrahedra around the cell's main diagonal.
pub fn generate_bar(nx: usize, ny: usize, nz: usize, size: [f64; 3], density: f64) -> Result<TetMesh> {
    if nx == 0 || ny == 0 || nz == 0 {
        return Err(Error::invalid("bar cell counts must be >= 1"));
    }
    if size.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::invalid("bar extents must be positive"));
    }
    let idx = |i: usize, j: usize, k: usize| (k * (ny + 1) + j) * (nx + 1) + i;
    let mut verts = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                verts.push(Vec3::new(
                    size[0] * i as f64 / nx as f64,
                    size[1] * j as f64 / ny as f64,
                    size[2] * k as f64 / nz as f64,
                ));
            }
        }
    }
    // Kuhn split: one tet per axis permutation, all sharing the diagonal.
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut tets = Vec::with_capacity(6 * nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                for perm in PERMS {
                    let mut c = [i, j, k];
                    let mut t = [idx(c[0], c[1], c[2]); 4];
                    for (s, &axis) in perm.iter().enumerate() {
                        c[axis] += 1;
                        t[s + 1] = idx(c[0], c[1], c[2]);
                    }
                    let d = Vec3::from(verts[t[1]] - verts[t[0]])
                        .dot(&(verts[t[2]] - verts[t[0]]).cross(&(verts[t[3]] - verts[t[0]])));
                    if d < 0.0 {
                        t.swap(2, 3);
                    }
                    tets.push(t);
                }
            }
        }
    }
    TetMesh::build_precomputed(verts, tets, density)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bar1_counts() {
        let m = generate_bar(2, 2, 8, [0.08, 0.08, 0.32], 1000.0).unwrap();
        assert_eq!(m.num_verts(), 81);
        assert_eq!(m.num_elements(), 192);
        let expected = (0.08f64 * 0.08 + 0.08 * 0.08 + 0.32 * 0.32).sqrt();
        assert!((m.object_size() - expected).abs() < 1e-15);
        assert!((m.object_size() - 0.3394).abs() < 1e-4);
        assert!((m.total_volume() - 0.08 * 0.08 * 0.32).abs() < 1e-15);
        assert!((m.total_mass() - 1000.0 * m.total_volume()).abs() <= 1e-12 * m.total_mass());
    }

    #[test]
    fn single_cell() {
        let m = generate_bar(1, 1, 1, [1.0, 1.0, 1.0], 1.0).unwrap();
        assert_eq!(m.num_verts(), 8);
        assert_eq!(m.num_elements(), 6);
        for e in 0..6 {
            assert!((m.volume(e) - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn faces_partition_bounding_box() {
        let m = generate_bar(2, 3, 4, [1.0, 1.0, 2.0], 1.0).unwrap();
        assert_eq!(BarFace::ZMin.vertices(&m).len(), 3 * 4);
        assert_eq!(BarFace::XMax.vertices(&m).len(), 4 * 5);
        assert_eq!(BarFace::YMin.vertices(&m).len(), 3 * 5);
    }

    #[test]
    fn zero_cells_rejected() {
        assert!(generate_bar(0, 1, 1, [1.0; 3], 1.0).is_err());
    }
}
