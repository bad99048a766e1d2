//! Tetrahedral meshes: precomputed rest-shape data, deformation gradients,
//! procedural bars, TetGen text IO and vertex-set selection.

mod bar;
mod selection;
mod tetgen;

pub use bar::{generate_bar, BarFace};
pub use selection::{select_constraint_points, VertexSets};
pub use tetgen::{read_tetgen, write_tetgen};

use crate::error::{Error, Result};
use crate::numerics::{Mat3, Vec3};

/// Material-space tetrahedral mesh with per-element precomputation.
#[derive(Debug, Clone)]
pub struct TetMesh {
    rest: Vec<Vec3>,
    tets: Vec<[usize; 4]>,
    density: f64,
    /// Inverse of the rest edge matrix `Dm`, per element.
    bm: Vec<Mat3>,
    volume: Vec<f64>,
    lumped_mass: Vec<f64>,
}

impl TetMesh {
    /// Precomputes `Bm = Dm^-1`, rest volumes and lumped vertex masses.
    ///
    /// `Dm` has the edge vectors from vertex 0 to vertices 1..3 as columns,
    /// and every element must have `det(Dm) / 6 > 0`.
    pub fn build_precomputed(rest: Vec<Vec3>, tets: Vec<[usize; 4]>, density: f64) -> Result<Self> {
        if !(density > 0.0 && density.is_finite()) {
            return Err(Error::invalid(format!("density must be positive, got {density}")));
        }
        if rest.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite("mesh vertices".into()));
        }
        let n = rest.len();
        let mut bm = Vec::with_capacity(tets.len());
        let mut volume = Vec::with_capacity(tets.len());
        let mut lumped_mass = vec![0.0; n];
        for (e, t) in tets.iter().enumerate() {
            if let Some(&bad) = t.iter().find(|&&i| i >= n) {
                return Err(Error::invalid(format!("element {e} references vertex {bad} but the mesh has {n}")));
            }
            let dm = edge_matrix(&rest, t);
            let w = dm.determinant() / 6.0;
            let scale = dm.norm().powi(3).max(f64::MIN_POSITIVE);
            if !(w > 1e-12 * scale) {
                return Err(Error::DegenerateElement { element: e, volume: w });
            }
            let inv = dm.try_inverse().ok_or(Error::DegenerateElement { element: e, volume: w })?;
            bm.push(inv);
            volume.push(w);
            for &i in t {
                lumped_mass[i] += density * w / 4.0;
            }
        }
        Ok(TetMesh {
            rest,
            tets,
            density,
            bm,
            volume,
            lumped_mass,
        })
    }

    pub fn num_verts(&self) -> usize {
        self.rest.len()
    }

    pub fn num_dofs(&self) -> usize {
        3 * self.rest.len()
    }

    pub fn num_elements(&self) -> usize {
        self.tets.len()
    }

    pub fn rest(&self) -> &[Vec3] {
        &self.rest
    }

    /// Rest positions flattened to `[x0, y0, z0, x1, ...]`.
    pub fn rest_positions(&self) -> Vec<f64> {
        self.rest.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }

    pub fn tets(&self) -> &[[usize; 4]] {
        &self.tets
    }

    pub fn density(&self) -> f64 {
        self.density
    }

    pub fn bm(&self, e: usize) -> &Mat3 {
        &self.bm[e]
    }

    pub fn volume(&self, e: usize) -> f64 {
        self.volume[e]
    }

    pub fn lumped_mass(&self) -> &[f64] {
        &self.lumped_mass
    }

    /// Per-dof mass diagonal (each vertex mass repeated three times).
    pub fn mass_diagonal(&self) -> Vec<f64> {
        self.lumped_mass.iter().flat_map(|&m| [m, m, m]).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.lumped_mass.iter().sum()
    }

    pub fn total_volume(&self) -> f64 {
        self.volume.iter().sum()
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in &self.rest {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    /// Rest bounding-box diagonal; the "object size" used by error metrics.
    pub fn object_size(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        (hi - lo).norm()
    }

    /// `F = Ds Bm` for positions `x` (flattened, length 3N).
    pub fn deformation_gradient(&self, x: &[f64], e: usize) -> Mat3 {
        edge_matrix_flat(x, &self.tets[e]) * self.bm[e]
    }

    /// `Fdot = Dvs Bm` for velocities `v`.
    pub fn deformation_gradient_velocity(&self, v: &[f64], e: usize) -> Mat3 {
        edge_matrix_flat(v, &self.tets[e]) * self.bm[e]
    }

    /// Element adjacency: for each vertex the elements that contain it.
    pub fn vertex_elements(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_verts()];
        for (e, t) in self.tets.iter().enumerate() {
            for &i in t {
                out[i].push(e);
            }
        }
        out
    }

    /// Vertices sharing at least one element with any vertex in `seeds`
    /// (including the seeds themselves), sorted.
    pub fn one_ring(&self, seeds: &[usize]) -> Vec<usize> {
        let adj = self.vertex_elements();
        let mut mark = vec![false; self.num_verts()];
        for &s in seeds {
            for &e in &adj[s] {
                for &i in &self.tets[e] {
                    mark[i] = true;
                }
            }
            mark[s] = true;
        }
        mark.iter().enumerate().filter(|(_, m)| **m).map(|(i, _)| i).collect()
    }
}

fn edge_matrix(p: &[Vec3], t: &[usize; 4]) -> Mat3 {
    let x0 = p[t[0]];
    Mat3::from_columns(&[p[t[1]] - x0, p[t[2]] - x0, p[t[3]] - x0])
}

fn edge_matrix_flat(x: &[f64], t: &[usize; 4]) -> Mat3 {
    let at = |i: usize| Vec3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2]);
    let x0 = at(t[0]);
    Mat3::from_columns(&[at(t[1]) - x0, at(t[2]) - x0, at(t[3]) - x0])
}
