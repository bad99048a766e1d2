//! TOML run configuration. Moduli are given in MPa and sizes in meters;
//! everything is converted to SI on the way in.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::materials::{GradientMode, MaterialKind, MaterialParams};
use crate::mesh::{generate_bar, read_tetgen, BarFace, TetMesh};
use crate::neural::TrainConfig;
use crate::pipeline::{default_observed, element_layers, LearningConfig, Motion, Scenario};
use crate::simulator::{MaterialModel, SimConfig};
use crate::spacetime::{BasisOptions, SpacetimeOptions};

const MPA: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_name")]
    pub name: String,
    /// Root of all randomness; overridden by `--seed`.
    #[serde(default)]
    pub seed: u64,
    /// Output directory; overridden by `--out`.
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub mesh: MeshSource,
    pub truth: MaterialBlock,
    pub nominal: MaterialBlock,
    pub scenario: ScenarioBlock,
    /// Held-out trajectories for `eval`.
    #[serde(default)]
    pub tests: Vec<TestBlock>,
    #[serde(default)]
    pub learning: LearningBlock,
}

fn default_name() -> String {
    "run".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeshSource {
    Bar {
        cells: [usize; 3],
        /// Extent in meters.
        size: [f64; 3],
        /// kg/m³.
        density: f64,
    },
    /// TetGen `.node`/`.ele` pair; relative paths resolve against the
    /// config file's directory.
    Tetgen { node: PathBuf, ele: PathBuf, density: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialBlock {
    pub kind: MaterialKind,
    /// Young's modulus, MPa.
    pub young: f64,
    pub poisson: f64,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub beta: f64,
    /// Ground truth only: slabs along an axis cycling through moduli.
    #[serde(default)]
    pub layers: Option<Layers>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layers {
    /// 0 = x, 1 = y, 2 = z.
    pub axis: usize,
    pub count: usize,
    /// Moduli in MPa, assigned to slab `i` as `young[i % len]`.
    pub young: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioBlock {
    pub motion: Motion,
    pub magnitude: f64,
    #[serde(default = "default_direction")]
    pub direction: [f64; 3],
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default = "default_gravity")]
    pub gravity: [f64; 3],
    #[serde(default = "default_fixed")]
    pub fixed_face: BarFace,
    #[serde(default = "default_driven")]
    pub driven_face: BarFace,
    /// Observed vertices; defaults to every face except the fixed one.
    #[serde(default)]
    pub observed: Option<Vec<usize>>,
    #[serde(default = "default_gradient")]
    pub gradient: GradientMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestBlock {
    pub name: String,
    pub motion: Motion,
    pub magnitude: f64,
    #[serde(default = "default_direction")]
    pub direction: [f64; 3],
    /// Defaults to the training scenario's frame count.
    #[serde(default)]
    pub frames: Option<usize>,
}

fn default_direction() -> [f64; 3] {
    [1.0, 0.0, 0.0]
}
fn default_frames() -> usize {
    400
}
fn default_h() -> f64 {
    1e-3
}
fn default_gravity() -> [f64; 3] {
    [0.0, -9.81, 0.0]
}
fn default_fixed() -> BarFace {
    BarFace::ZMin
}
fn default_driven() -> BarFace {
    BarFace::ZMax
}
fn default_gradient() -> GradientMode {
    GradientMode::Analytic
}

/// Learning-loop settings; the nominal material and seed come from the
/// enclosing config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningBlock {
    pub width: usize,
    pub zeta_p: f64,
    pub constraint_points: usize,
    pub basis: BasisOptions,
    pub spacetime: SpacetimeOptions,
    pub training: TrainConfig,
    pub max_outer: usize,
    /// % of object size.
    pub tolerance: f64,
    pub stagnation: usize,
    pub divergence: f64,
    pub max_backoff: usize,
}

impl Default for LearningBlock {
    fn default() -> Self {
        let d = LearningConfig::new(MaterialParams {
            kind: MaterialKind::Corotational,
            young: 1.0,
            poisson: 0.3,
            alpha: 0.0,
            beta: 0.0,
        });
        LearningBlock {
            width: d.width,
            zeta_p: d.zeta_p,
            constraint_points: d.constraint_points,
            basis: d.basis,
            spacetime: d.spacetime,
            training: d.training,
            max_outer: d.max_outer,
            tolerance: d.tolerance,
            stagnation: d.stagnation,
            divergence: d.divergence,
            max_backoff: d.max_backoff,
        }
    }
}

fn cfg_err(path: &str, message: impl std::fmt::Display) -> Error {
    Error::Config {
        path: path.into(),
        message: message.to_string(),
    }
}

impl MaterialBlock {
    pub fn params(&self) -> Result<MaterialParams> {
        MaterialParams::new(self.kind, self.young * MPA, self.poisson)?.with_damping(self.alpha, self.beta)
    }
}

impl RunConfig {
    /// Parses and validates; errors carry the offending key path.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| cfg_err("", e.to_string().trim_end()))?;
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            cfg_err(if path == "." { "" } else { &path }, e.into_inner().to_string().trim_end())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`; relative mesh paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let MeshSource::Tetgen { node, ele, .. } = &mut cfg.mesh {
            let base = path.parent().unwrap_or(Path::new(""));
            for p in [node, ele] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| cfg_err("", e))
    }

    pub fn validate(&self) -> Result<()> {
        match &self.mesh {
            MeshSource::Bar { cells, size, density } => {
                if cells.contains(&0) {
                    return Err(cfg_err("mesh.cells", "cell counts must be >= 1"));
                }
                if !size.iter().all(|s| *s > 0.0 && s.is_finite()) {
                    return Err(cfg_err("mesh.size", "extents must be finite and > 0"));
                }
                check_density(*density)?;
            }
            MeshSource::Tetgen { density, .. } => check_density(*density)?,
        }
        self.truth.params().map_err(|e| cfg_err("truth", e))?;
        if let Some(l) = &self.truth.layers {
            if l.axis > 2 {
                return Err(cfg_err("truth.layers.axis", "must be 0, 1 or 2"));
            }
            if l.count == 0 || l.young.is_empty() {
                return Err(cfg_err("truth.layers", "count and young must be non-empty"));
            }
            if !l.young.iter().all(|e| *e > 0.0 && e.is_finite()) {
                return Err(cfg_err("truth.layers.young", "moduli must be finite and > 0"));
            }
        }
        self.nominal.params().map_err(|e| cfg_err("nominal", e))?;
        if self.nominal.kind != MaterialKind::Corotational {
            return Err(cfg_err("nominal.kind", "the nominal model must be corotational"));
        }
        if self.nominal.layers.is_some() {
            return Err(cfg_err("nominal.layers", "the nominal model is homogeneous"));
        }
        if self.nominal.alpha != 0.0 || self.nominal.beta != 0.0 {
            return Err(cfg_err("nominal", "the nominal model has no damping; the network learns it"));
        }
        let s = &self.scenario;
        self.scenario().validate().map_err(|e| cfg_err("scenario", e))?;
        if s.frames < 3 {
            return Err(cfg_err("scenario.frames", "need at least 3 frames"));
        }
        self.sim_config().validate().map_err(|e| cfg_err("scenario", e))?;
        for (i, t) in self.tests.iter().enumerate() {
            self.test_scenario(t)
                .validate()
                .map_err(|e| cfg_err(&format!("tests[{i}]"), e))?;
        }
        self.learning_config()?.validate().map_err(|e| cfg_err("learning", e))?;
        Ok(())
    }

    pub fn build_mesh(&self) -> Result<TetMesh> {
        match &self.mesh {
            MeshSource::Bar { cells, size, density } => generate_bar(cells[0], cells[1], cells[2], *size, *density),
            MeshSource::Tetgen { node, ele, density } => read_tetgen(node, ele, *density),
        }
    }

    pub fn truth_model(&self, mesh: &TetMesh) -> Result<MaterialModel> {
        let params = self.truth.params()?;
        match &self.truth.layers {
            None => Ok(MaterialModel::truth(params)),
            Some(l) => {
                let scale = element_layers(mesh, l.axis, l.count)
                    .into_iter()
                    .map(|k| l.young[k % l.young.len()] / self.truth.young)
                    .collect();
                MaterialModel::heterogeneous(params, scale)
            }
        }
    }

    pub fn nominal_params(&self) -> Result<MaterialParams> {
        self.nominal.params()
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            h: self.scenario.h,
            gravity: self.scenario.gravity,
            gradient: self.scenario.gradient,
            ..SimConfig::default()
        }
    }

    pub fn scenario(&self) -> Scenario {
        let s = &self.scenario;
        Scenario {
            motion: s.motion,
            magnitude: s.magnitude,
            direction: s.direction,
            frames: s.frames,
            fixed_face: s.fixed_face,
            driven_face: s.driven_face,
        }
    }

    pub fn test_scenario(&self, t: &TestBlock) -> Scenario {
        Scenario {
            motion: t.motion,
            magnitude: t.magnitude,
            direction: t.direction,
            frames: t.frames.unwrap_or(self.scenario.frames),
            ..self.scenario()
        }
    }

    pub fn observed(&self, mesh: &TetMesh) -> Result<Vec<usize>> {
        match &self.scenario.observed {
            Some(v) => {
                if let Some(bad) = v.iter().find(|&&i| i >= mesh.num_verts()) {
                    return Err(cfg_err("scenario.observed", format!("vertex {bad} out of range")));
                }
                Ok(v.clone())
            }
            None => Ok(default_observed(mesh, self.scenario.fixed_face)),
        }
    }

    pub fn learning_config(&self) -> Result<LearningConfig> {
        let l = &self.learning;
        Ok(LearningConfig {
            nominal: self.nominal.params()?,
            width: l.width,
            zeta_p: l.zeta_p,
            constraint_points: l.constraint_points,
            basis: l.basis.clone(),
            spacetime: l.spacetime.clone(),
            training: l.training.clone(),
            max_outer: l.max_outer,
            tolerance: l.tolerance,
            stagnation: l.stagnation,
            divergence: l.divergence,
            max_backoff: l.max_backoff,
            seed: self.seed,
        })
    }
}

fn check_density(d: f64) -> Result<()> {
    if d > 0.0 && d.is_finite() {
        Ok(())
    } else {
        Err(cfg_err("mesh.density", "must be finite and > 0"))
    }
}
