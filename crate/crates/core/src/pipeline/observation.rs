use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::TetMesh;
use crate::simulator::Trajectory;

/// What the learner gets to see: positions of the observed vertices over
/// time, plus which vertices are held.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Observation {
    pub h: f64,
    pub immobilized: Vec<usize>,
    pub observed: Vec<usize>,
    /// `positions[i]` holds 3 coordinates per observed vertex at frame `i`.
    pub positions: Vec<Vec<f64>>,
}

impl Observation {
    pub fn from_trajectory(traj: &Trajectory, immobilized: &[usize], observed: &[usize]) -> Result<Self> {
        let n = traj.num_verts();
        if let Some(bad) = observed.iter().chain(immobilized).find(|&&v| v >= n) {
            return Err(Error::invalid(format!("vertex {bad} out of range ({n} vertices)")));
        }
        let positions = traj
            .frames
            .iter()
            .map(|f| observed.iter().flat_map(|&v| [f[3 * v], f[3 * v + 1], f[3 * v + 2]]).collect())
            .collect();
        let obs = Observation {
            h: traj.h,
            immobilized: immobilized.to_vec(),
            observed: observed.to_vec(),
            positions,
        };
        obs.validate(n)?;
        Ok(obs)
    }

    pub fn frames(&self) -> usize {
        self.positions.len()
    }

    pub fn validate(&self, num_verts: usize) -> Result<()> {
        if !(self.h > 0.0) {
            return Err(Error::invalid("observation time step must be > 0"));
        }
        if self.positions.len() < 3 {
            return Err(Error::invalid("observation needs at least 3 frames"));
        }
        if self.observed.is_empty() {
            return Err(Error::invalid("no observed vertices"));
        }
        if let Some(bad) = self.observed.iter().chain(&self.immobilized).find(|&&v| v >= num_verts) {
            return Err(Error::invalid(format!("vertex {bad} out of range ({num_verts} vertices)")));
        }
        if let Some(v) = self.observed.iter().find(|v| self.immobilized.contains(v)) {
            return Err(Error::invalid(format!("vertex {v} is both observed and immobilized")));
        }
        let w = 3 * self.observed.len();
        if let Some(i) = self.positions.iter().position(|p| p.len() != w) {
            return Err(Error::ShapeMismatch(format!("observation frame {i} has the wrong width")));
        }
        if !self.positions.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("observed positions".into()));
        }
        Ok(())
    }

    /// Position of `observed[k]` at `frame`.
    pub fn position(&self, frame: usize, k: usize) -> [f64; 3] {
        let p = &self.positions[frame];
        [p[3 * k], p[3 * k + 1], p[3 * k + 2]]
    }

    /// Full 3N frames with observed vertices at their observed positions and
    /// everything else at rest.
    pub fn target_trajectory(&self, mesh: &TetMesh) -> Result<Trajectory> {
        let rest = mesh.rest_positions();
        let frames = (0..self.frames())
            .map(|i| {
                let mut x = rest.clone();
                for (k, &v) in self.observed.iter().enumerate() {
                    x[3 * v..3 * v + 3].copy_from_slice(&self.position(i, k));
                }
                x
            })
            .collect();
        Trajectory::new(self.h, frames)
    }

    /// Observed positions of `verts` (a subset of `observed`), 3 per vertex
    /// per frame.
    pub fn targets_for(&self, verts: &[usize]) -> Result<Vec<Vec<f64>>> {
        let idx: Vec<usize> = verts
            .iter()
            .map(|v| {
                self.observed
                    .iter()
                    .position(|o| o == v)
                    .ok_or_else(|| Error::invalid(format!("vertex {v} is not observed")))
            })
            .collect::<Result<_>>()?;
        Ok((0..self.frames()).map(|i| idx.iter().flat_map(|&k| self.position(i, k)).collect()).collect())
    }

    /// Max over frames and observed vertices of the distance to `traj`, in
    /// percent of the object size.
    pub fn max_error(&self, traj: &Trajectory, mesh: &TetMesh) -> Result<f64> {
        if traj.len() < self.frames() || traj.num_verts() != mesh.num_verts() {
            return Err(Error::ShapeMismatch("trajectory does not cover the observation".into()));
        }
        let mut worst = 0.0f64;
        for i in 0..self.frames() {
            for (k, &v) in self.observed.iter().enumerate() {
                let p = self.position(i, k);
                let x = &traj.frames[i][3 * v..3 * v + 3];
                let d = ((x[0] - p[0]).powi(2) + (x[1] - p[1]).powi(2) + (x[2] - p[2]).powi(2)).sqrt();
                worst = worst.max(d);
            }
        }
        Ok(100.0 * worst / mesh.object_size())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            file: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Keeps only `verts` (in that order) of every frame, e.g. to read a fine
/// trajectory at the nodes of a nested coarse mesh.
pub fn restrict_trajectory(traj: &Trajectory, verts: &[usize]) -> Result<Trajectory> {
    if let Some(bad) = verts.iter().find(|&&v| v >= traj.num_verts()) {
        return Err(Error::invalid(format!("vertex {bad} out of range")));
    }
    let pick = |f: &Vec<f64>| verts.iter().flat_map(|&v| [f[3 * v], f[3 * v + 1], f[3 * v + 2]]).collect::<Vec<f64>>();
    let frames = traj.frames.iter().map(pick).collect();
    match &traj.velocities {
        Some(vs) => Trajectory::with_velocities(traj.h, frames, vs.iter().map(pick).collect()),
        None => Trajectory::new(traj.h, frames),
    }
}

/// For each vertex of `coarse`, the vertex of `fine` at the same rest
/// position.
pub fn nested_vertex_map(coarse: &TetMesh, fine: &TetMesh) -> Result<Vec<usize>> {
    let tol = 1e-9 * fine.object_size();
    coarse
        .rest()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            fine.rest()
                .iter()
                .position(|q| (p - q).norm() <= tol)
                .ok_or_else(|| Error::invalid(format!("coarse vertex {i} has no fine counterpart")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_bar;

    fn traj(mesh: &TetMesh) -> Trajectory {
        let rest = mesh.rest_positions();
        let frames = (0..4).map(|i| rest.iter().map(|x| x + 0.01 * i as f64).collect()).collect();
        Trajectory::new(1e-3, frames).unwrap()
    }

    #[test]
    fn round_trip_and_targets() {
        let mesh = generate_bar(1, 1, 2, [0.1, 0.1, 0.2], 1000.0).unwrap();
        let t = traj(&mesh);
        let obs = Observation::from_trajectory(&t, &[0, 1], &[4, 9, 11]).unwrap();
        assert_eq!(obs.position(2, 1), [t.frames[2][27], t.frames[2][28], t.frames[2][29]]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("obs.json");
        obs.save(&p).unwrap();
        assert_eq!(Observation::load(&p).unwrap(), obs);

        let full = obs.target_trajectory(&mesh).unwrap();
        assert_eq!(full.frames[3][27..30], t.frames[3][27..30]);
        assert_eq!(full.frames[3][0..3], mesh.rest_positions()[0..3]);
        assert_eq!(obs.targets_for(&[11]).unwrap()[1], t.frames[1][33..36].to_vec());
        assert!(obs.targets_for(&[0]).is_err());
    }

    #[test]
    fn error_is_percent_of_size_on_observed_only() {
        let mesh = generate_bar(1, 1, 2, [0.1, 0.1, 0.2], 1000.0).unwrap();
        let t = traj(&mesh);
        let obs = Observation::from_trajectory(&t, &[], &[5]).unwrap();
        let mut other = t.clone();
        other.frames[2][15] += 0.003;
        other.frames[2][0] += 1.0; // unobserved
        let expected = 100.0 * 0.003 / mesh.object_size();
        assert!((obs.max_error(&other, &mesh).unwrap() - expected).abs() < 1e-12);
        assert_eq!(obs.max_error(&t, &mesh).unwrap(), 0.0);
    }

    #[test]
    fn invalid_observations_are_rejected() {
        let mesh = generate_bar(1, 1, 1, [0.1; 3], 1000.0).unwrap();
        let t = traj(&mesh);
        assert!(Observation::from_trajectory(&t, &[1], &[1]).is_err());
        assert!(Observation::from_trajectory(&t, &[], &[99]).is_err());
        assert!(Observation::from_trajectory(&t.truncated(2), &[], &[1]).is_err());
    }

    #[test]
    fn nested_meshes_share_nodes() {
        let fine = generate_bar(4, 4, 8, [0.16, 0.16, 0.32], 1.0).unwrap();
        let coarse = generate_bar(2, 2, 4, [0.16, 0.16, 0.32], 1.0).unwrap();
        let map = nested_vertex_map(&coarse, &fine).unwrap();
        assert_eq!(map.len(), coarse.num_verts());
        let t = restrict_trajectory(&Trajectory::new(1.0, vec![fine.rest_positions(); 3]).unwrap(), &map).unwrap();
        assert_eq!(t.frames[1], coarse.rest_positions());
        let odd = generate_bar(3, 3, 4, [0.16, 0.16, 0.32], 1.0).unwrap();
        assert!(nested_vertex_map(&odd, &fine).is_err());
    }
}
