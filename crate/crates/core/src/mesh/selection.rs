use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TetMesh;
use crate::error::{Error, Result};

/// Named vertex subsets of a scenario.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VertexSets {
    /// Held at rest for the whole trajectory.
    pub immobilized: Vec<usize>,
    /// Vertices whose trajectories are observed.
    pub observed: Vec<usize>,
    /// Sparse subset of `observed` used as space-time position constraints.
    pub constraint_points: Vec<usize>,
}

impl VertexSets {
    pub fn validate(&self, num_verts: usize) -> Result<()> {
        let all = self.immobilized.iter().chain(&self.observed).chain(&self.constraint_points);
        if let Some(bad) = all.copied().find(|&i| i >= num_verts) {
            return Err(Error::invalid(format!("vertex index {bad} out of range ({num_verts} vertices)")));
        }
        if let Some(c) = self.constraint_points.iter().find(|c| !self.observed.contains(c)) {
            return Err(Error::invalid(format!("constraint point {c} is not observed")));
        }
        if let Some(c) = self.observed.iter().find(|c| self.immobilized.contains(c)) {
            return Err(Error::invalid(format!("vertex {c} is both observed and immobilized")));
        }
        Ok(())
    }

    /// Per-vertex flag for immobilized vertices.
    pub fn immobilized_mask(&self, num_verts: usize) -> Vec<bool> {
        let mut mask = vec![false; num_verts];
        for &i in &self.immobilized {
            mask[i] = true;
        }
        mask
    }
}

/// Farthest-point sampling of `k` well-spread vertices from `observed`.
///
/// A seeded random vertex picks the start; the first kept point is the
/// observed vertex farthest from it, and each further point maximizes its
/// distance to the points already kept (ties go to the lower index).
pub fn select_constraint_points(mesh: &TetMesh, observed: &[usize], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k > observed.len() {
        return Err(Error::invalid(format!("cannot pick {k} points from {} observed", observed.len())));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut candidates = observed.to_vec();
    candidates.sort_unstable();
    candidates.dedup();
    if k == candidates.len() {
        return Ok(candidates);
    }
    let p = mesh.rest();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = candidates[rng.random_range(0..candidates.len())];

    let farthest = |dist: &[f64]| {
        let mut best = 0;
        for (i, d) in dist.iter().enumerate() {
            if *d > dist[best] {
                best = i;
            }
        }
        best
    };

    let mut dist: Vec<f64> = candidates.iter().map(|&c| (p[c] - p[start]).norm()).collect();
    let first = farthest(&dist);
    let mut chosen = vec![candidates[first]];
    dist = candidates.iter().map(|&c| (p[c] - p[candidates[first]]).norm()).collect();
    while chosen.len() < k {
        let next = farthest(&dist);
        let v = candidates[next];
        chosen.push(v);
        for (d, &c) in dist.iter_mut().zip(&candidates) {
            *d = d.min((p[c] - p[v]).norm());
        }
    }
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_bar, BarFace};

    #[test]
    fn all_points_when_k_equals_count() {
        let m = generate_bar(1, 1, 2, [1.0, 1.0, 2.0], 1.0).unwrap();
        let obs = BarFace::YMax.vertices(&m);
        let mut got = select_constraint_points(&m, &obs, obs.len(), 3).unwrap();
        got.sort_unstable();
        assert_eq!(got, obs);
    }

    #[test]
    fn two_points_realize_diameter() {
        let m = generate_bar(2, 2, 8, [0.08, 0.08, 0.32], 1.0).unwrap();
        let mut obs = BarFace::YMax.vertices(&m);
        obs.extend(BarFace::XMax.vertices(&m));
        obs.sort_unstable();
        obs.dedup();
        let p = m.rest();
        let mut diam: f64 = 0.0;
        for &a in &obs {
            for &b in &obs {
                diam = diam.max((p[a] - p[b]).norm());
            }
        }
        for seed in 0..20 {
            let got = select_constraint_points(&m, &obs, 2, seed).unwrap();
            assert!(((p[got[0]] - p[got[1]]).norm() - diam).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let m = generate_bar(2, 2, 8, [0.08, 0.08, 0.32], 1.0).unwrap();
        let obs = BarFace::YMax.vertices(&m);
        let a = select_constraint_points(&m, &obs, 6, 42).unwrap();
        let b = select_constraint_points(&m, &obs, 6, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
        assert!(a.iter().all(|v| obs.contains(v)));
    }

    #[test]
    fn validation_catches_overlap() {
        let sets = VertexSets {
            immobilized: vec![0, 1],
            observed: vec![1, 2],
            constraint_points: vec![2],
        };
        assert!(sets.validate(3).is_err());
        let sets = VertexSets {
            immobilized: vec![0],
            observed: vec![1, 2],
            constraint_points: vec![3],
        };
        assert!(sets.validate(4).is_err());
    }
}
