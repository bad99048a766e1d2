use nalgebra::Rotation3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{BarFace, TetMesh};
use crate::numerics::Vec3;
use crate::simulator::{simulate, static_equilibrium, MaterialModel, SimConfig, SimState, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motion {
    Bend,
    Stretch,
    Twist,
}

/// Hold one face, displace the opposite one, let the static solution go.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub motion: Motion,
    /// Bend / stretch: displacement of the driven face as a fraction of the
    /// length along its normal. Twist: rotation angle (rad).
    pub magnitude: f64,
    /// Bend direction; its component along the bar axis is dropped.
    #[serde(default = "default_direction")]
    pub direction: [f64; 3],
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default = "default_fixed")]
    pub fixed_face: BarFace,
    #[serde(default = "default_driven")]
    pub driven_face: BarFace,
}

fn default_direction() -> [f64; 3] {
    [1.0, 0.0, 0.0]
}
fn default_frames() -> usize {
    400
}
fn default_fixed() -> BarFace {
    BarFace::ZMin
}
fn default_driven() -> BarFace {
    BarFace::ZMax
}

impl Scenario {
    pub fn new(motion: Motion, magnitude: f64) -> Self {
        Scenario {
            motion,
            magnitude,
            direction: default_direction(),
            frames: default_frames(),
            fixed_face: default_fixed(),
            driven_face: default_driven(),
        }
    }

    pub fn with_direction(mut self, d: [f64; 3]) -> Self {
        self.direction = d;
        self
    }

    pub fn with_frames(mut self, frames: usize) -> Self {
        self.frames = frames;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.magnitude.is_finite() {
            return Err(Error::invalid("scenario magnitude must be finite"));
        }
        if self.frames < 3 {
            return Err(Error::invalid("a scenario needs at least 3 frames"));
        }
        if self.fixed_face == self.driven_face {
            return Err(Error::invalid("fixed and driven faces must differ"));
        }
        if self.motion == Motion::Bend && self.magnitude != 0.0 {
            let a = self.driven_face.axis();
            let mut d = Vec3::from(self.direction);
            d[a] = 0.0;
            if d.norm() == 0.0 {
                return Err(Error::invalid("bend direction is parallel to the bar axis"));
            }
        }
        Ok(())
    }

    pub fn immobilized(&self, mesh: &TetMesh) -> Vec<usize> {
        self.fixed_face.vertices(mesh)
    }

    /// Boundary conditions of the static pre-load: fixed face at rest,
    /// driven face moved rigidly.
    pub fn pins(&self, mesh: &TetMesh) -> Result<Vec<(usize, Vec3)>> {
        self.validate()?;
        let rest = mesh.rest();
        let fixed = self.immobilized(mesh);
        let driven: Vec<usize> = self.driven_face.vertices(mesh).into_iter().filter(|v| !fixed.contains(v)).collect();
        let a = self.driven_face.axis();
        let (lo, hi) = mesh.bounding_box();
        let length = hi[a] - lo[a];
        let outward = if self.driven_face.is_max() { 1.0 } else { -1.0 };
        let moved = |p: Vec3| -> Vec3 {
            match self.motion {
                Motion::Bend => {
                    let mut d = Vec3::from(self.direction);
                    d[a] = 0.0;
                    if self.magnitude == 0.0 {
                        return p;
                    }
                    p + d.normalize() * (self.magnitude * length)
                }
                Motion::Stretch => {
                    let mut q = p;
                    q[a] += outward * self.magnitude * length;
                    q
                }
                Motion::Twist => {
                    let c = driven.iter().map(|&v| rest[v]).sum::<Vec3>() / driven.len() as f64;
                    let axis = nalgebra::Unit::new_normalize(Vec3::ith(a, 1.0));
                    c + Rotation3::from_axis_angle(&axis, self.magnitude) * (p - c)
                }
            }
        };
        let mut pins: Vec<(usize, Vec3)> = fixed.iter().map(|&v| (v, rest[v])).collect();
        pins.extend(driven.iter().map(|&v| (v, moved(rest[v]))));
        Ok(pins)
    }

    /// Static equilibrium of `model` under the pre-load, at rest.
    pub fn initial_state(&self, mesh: &TetMesh, model: &MaterialModel, cfg: &SimConfig) -> Result<SimState> {
        let x = static_equilibrium(mesh, model, cfg, &self.pins(mesh)?).map_err(|e| e.in_stage("scenario pre-load", 0))?;
        Ok(SimState::at_rest(x))
    }

    /// Released trajectory with only the fixed face held.
    pub fn simulate(&self, mesh: &TetMesh, model: &MaterialModel, cfg: &SimConfig) -> Result<Trajectory> {
        let s0 = self.initial_state(mesh, model, cfg)?;
        simulate(mesh, model, &s0, cfg, &self.immobilized(mesh), self.frames)
    }
}

/// Every face but the fixed one.
pub fn default_observed(mesh: &TetMesh, fixed: BarFace) -> Vec<usize> {
    let held = fixed.vertices(mesh);
    let mut obs: Vec<usize> = [BarFace::XMin, BarFace::XMax, BarFace::YMin, BarFace::YMax, BarFace::ZMin, BarFace::ZMax]
        .into_iter()
        .filter(|f| *f != fixed)
        .flat_map(|f| f.vertices(mesh))
        .filter(|v| !held.contains(v))
        .collect();
    obs.sort_unstable();
    obs.dedup();
    obs
}

/// Layer index along `axis` of every element's centroid, for layered
/// materials: `layers` equal slabs over the bounding box.
pub fn element_layers(mesh: &TetMesh, axis: usize, layers: usize) -> Vec<usize> {
    let (lo, hi) = mesh.bounding_box();
    let span = hi[axis] - lo[axis];
    mesh.tets()
        .iter()
        .map(|t| {
            let c: f64 = t.iter().map(|&v| mesh.rest()[v][axis]).sum::<f64>() / 4.0;
            (((c - lo[axis]) / span * layers as f64) as usize).min(layers - 1)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::materials::{GradientMode, MaterialKind, MaterialParams};
    use crate::mesh::generate_bar;

    fn bar() -> TetMesh {
        generate_bar(2, 2, 8, [0.08, 0.08, 0.32], 1e6).unwrap()
    }

    #[test]
    fn pins_follow_the_motion() {
        let mesh = bar();
        let tip = BarFace::ZMax.vertices(&mesh);
        let pins = Scenario::new(Motion::Bend, 0.1).pins(&mesh).unwrap();
        assert_eq!(pins.len(), 18);
        for (v, p) in &pins {
            let r = mesh.rest()[*v];
            if tip.contains(v) {
                assert!((p - r - Vec3::new(0.032, 0.0, 0.0)).norm() < 1e-15);
            } else {
                assert_eq!(*p, r);
            }
        }
        let pins = Scenario::new(Motion::Stretch, 0.1).pins(&mesh).unwrap();
        assert!(pins.iter().filter(|(v, _)| tip.contains(v)).all(|(v, p)| (p.z - mesh.rest()[*v].z - 0.032).abs() < 1e-15));

        let quarter = std::f64::consts::FRAC_PI_2;
        let pins = Scenario::new(Motion::Twist, quarter).pins(&mesh).unwrap();
        for (v, p) in pins.iter().filter(|(v, _)| tip.contains(v)) {
            let r = mesh.rest()[*v];
            // quarter turn about the face centre (0.04, 0.04)
            assert!((p.x - (0.04 - (r.y - 0.04))).abs() < 1e-15);
            assert!((p.y - (0.04 + (r.x - 0.04))).abs() < 1e-15);
            assert_eq!(p.z, r.z);
        }
    }

    #[test]
    fn invalid_scenarios_are_rejected() {
        let mesh = bar();
        assert!(Scenario::new(Motion::Bend, 0.1).with_direction([0.0, 0.0, 1.0]).pins(&mesh).is_err());
        assert!(Scenario::new(Motion::Bend, f64::NAN).validate().is_err());
        assert!(Scenario::new(Motion::Bend, 0.1).with_frames(2).validate().is_err());
    }

    #[test]
    fn zero_perturbation_without_gravity_stays_at_rest() {
        let mesh = generate_bar(1, 1, 3, [0.1, 0.1, 0.3], 1000.0).unwrap();
        let model = MaterialModel::truth(MaterialParams::new(MaterialKind::Corotational, 1e6, 0.4).unwrap());
        let cfg = SimConfig {
            gravity: [0.0; 3],
            gradient: GradientMode::Analytic,
            ..SimConfig::default()
        };
        let traj = Scenario::new(Motion::Twist, 0.0).with_frames(10).simulate(&mesh, &model, &cfg).unwrap();
        let rest = mesh.rest_positions();
        for f in &traj.frames {
            assert!(f.iter().zip(&rest).all(|(a, b)| (a - b).abs() < 1e-14));
        }
    }

    #[test]
    fn released_bend_swings_back() {
        let mesh = generate_bar(1, 1, 4, [0.08, 0.08, 0.32], 1e6).unwrap();
        let model = MaterialModel::truth(MaterialParams::new(MaterialKind::Corotational, 5e9, 0.43).unwrap());
        let cfg = SimConfig {
            gradient: GradientMode::Analytic,
            ..SimConfig::default()
        };
        let sc = Scenario::new(Motion::Bend, 0.05).with_frames(80);
        let traj = sc.simulate(&mesh, &model, &cfg).unwrap();
        let tip = BarFace::ZMax.vertices(&mesh)[0];
        let x0 = traj.frames[0][3 * tip] - mesh.rest()[tip].x;
        assert!((x0 - 0.016).abs() < 1e-12);
        let min = traj.frames.iter().map(|f| f[3 * tip] - mesh.rest()[tip].x).fold(f64::INFINITY, f64::min);
        assert!(min < -0.2 * x0, "tip never crossed: {min}");
        for &v in &sc.immobilized(&mesh) {
            assert!(traj.frames.iter().all(|f| (0..3).all(|a| f[3 * v + a] == mesh.rest()[v][a])));
        }
    }

    #[test]
    fn observed_faces_exclude_the_held_face() {
        let mesh = bar();
        let obs = default_observed(&mesh, BarFace::ZMin);
        // 81 vertices, 9 interior lines of which the centre line has 9 nodes;
        // the fixed face holds 9 → 81 − 7 interior − 9 = 65
        assert_eq!(obs.len(), 65);
        assert!(BarFace::ZMin.vertices(&mesh).iter().all(|v| !obs.contains(v)));
    }

    #[test]
    fn layers_split_elements_evenly() {
        let mesh = generate_bar(2, 2, 4, [1.0, 1.0, 2.0], 1.0).unwrap();
        let l = element_layers(&mesh, 2, 4);
        for k in 0..4 {
            assert_eq!(l.iter().filter(|&&x| x == k).count(), 24);
        }
    }
}
