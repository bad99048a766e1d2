use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::observation::Observation;
use crate::error::{Error, Result};
use crate::materials::MaterialParams;
use crate::mesh::{select_constraint_points, TetMesh};
use crate::neural::{train, Mlp, TrainConfig};
use crate::numerics::Vec3;
use crate::recovery::recover_trajectory;
use crate::simulator::{simulate, simulate_constrained, static_equilibrium, MaterialModel, SimConfig, SimState, Trajectory};
use crate::spacetime::{build_basis, BasisOptions, ControlForces, SpacetimeOptions, SpacetimeProblem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningConfig {
    pub nominal: MaterialParams,
    /// Hidden-layer width H.
    #[serde(default = "defaults::width")]
    pub width: usize,
    /// Fraction of the recovered stress added to the targets.
    #[serde(default = "defaults::zeta_p")]
    pub zeta_p: f64,
    /// Number of space-time position constraints.
    #[serde(default = "defaults::constraint_points")]
    pub constraint_points: usize,
    #[serde(default)]
    pub basis: BasisOptions,
    #[serde(default)]
    pub spacetime: SpacetimeOptions,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default = "defaults::max_outer")]
    pub max_outer: usize,
    /// Stop once the forward-simulation error (% of size) is at most this.
    #[serde(default = "defaults::tolerance")]
    pub tolerance: f64,
    /// Stop after this many iterations without a new best error while the
    /// control forces stop shrinking.
    #[serde(default = "defaults::stagnation")]
    pub stagnation: usize,
    /// An update whose forward simulation fails or ends with more than
    /// `divergence` × the current error is retrained with ζ_P halved, at
    /// most `max_backoff` times.
    #[serde(default = "defaults::divergence")]
    pub divergence: f64,
    #[serde(default = "defaults::max_backoff")]
    pub max_backoff: usize,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    pub fn divergence() -> f64 {
        2.0
    }
    pub fn max_backoff() -> usize {
        3
    }
    pub fn width() -> usize {
        6
    }
    pub fn zeta_p() -> f64 {
        0.1
    }
    pub fn constraint_points() -> usize {
        6
    }
    pub fn max_outer() -> usize {
        12
    }
    pub fn tolerance() -> f64 {
        1.0
    }
    pub fn stagnation() -> usize {
        3
    }
}

impl LearningConfig {
    pub fn new(nominal: MaterialParams) -> Self {
        LearningConfig {
            nominal,
            width: defaults::width(),
            zeta_p: defaults::zeta_p(),
            constraint_points: defaults::constraint_points(),
            basis: BasisOptions::default(),
            spacetime: SpacetimeOptions::default(),
            training: TrainConfig::default(),
            max_outer: defaults::max_outer(),
            tolerance: defaults::tolerance(),
            stagnation: defaults::stagnation(),
            divergence: defaults::divergence(),
            max_backoff: defaults::max_backoff(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.nominal.validate()?;
        if self.width == 0 || self.max_outer == 0 || self.constraint_points == 0 {
            return Err(Error::invalid("width, max_outer and constraint_points must be >= 1"));
        }
        if !(self.zeta_p > 0.0 && self.zeta_p <= 1.0) {
            return Err(Error::invalid("zeta_p must be in (0, 1]"));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::invalid("tolerance must be >= 0"));
        }
        if !(self.divergence > 1.0) {
            return Err(Error::invalid("divergence must be > 1"));
        }
        Ok(())
    }

    /// Per-iteration training seed.
    fn training_seed(&self, iteration: usize) -> u64 {
        self.seed ^ (iteration as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

/// One outer iteration: the error of the model it starts with, then the
/// update that produced the next network (absent on the last iteration).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Forward-simulation max error on observed vertices (% of size).
    pub error: f64,
    pub update: Option<UpdateRecord>,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub seed_physics_norm: f64,
    pub seed_position_norm: f64,
    pub physics_norm: f64,
    pub position_norm: f64,
    pub lambda_pos: f64,
    pub spacetime_iterations: usize,
    /// ‖control forces‖ over all frames (N).
    pub control_force_norm: f64,
    /// Max control-force magnitude near the constraint points over the mean
    /// over free vertices, for the constrained seed and the optimum.
    pub seed_concentration: f64,
    pub concentration: f64,
    pub training_samples: usize,
    pub training_loss: f64,
    pub training_epochs: usize,
    /// ζ_P of the accepted network, after any backoff.
    pub zeta_p: f64,
    /// Forward error of the accepted network (% of size).
    pub trial_error: f64,
}

/// Everything needed to continue a run after an interruption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningState {
    pub records: Vec<IterationRecord>,
    pub current: Option<Mlp>,
    pub best_iteration: usize,
    pub best_error: f64,
    pub best: Option<Mlp>,
    pub finished: bool,
}

impl Default for LearningState {
    fn default() -> Self {
        LearningState {
            records: Vec::new(),
            current: None,
            best_iteration: 0,
            best_error: f64::INFINITY,
            best: None,
            finished: false,
        }
    }
}

impl LearningState {
    pub fn next_iteration(&self) -> usize {
        self.records.len() + 1
    }
}

/// Static pre-load from the first observed frame, then free release.
pub fn forward_from_observation(mesh: &TetMesh, model: &MaterialModel, sim: &SimConfig, obs: &Observation) -> Result<(SimState, Trajectory)> {
    let mut pins: Vec<(usize, Vec3)> = obs.immobilized.iter().map(|&v| (v, mesh.rest()[v])).collect();
    pins.extend(obs.observed.iter().enumerate().map(|(k, &v)| (v, Vec3::from(obs.position(0, k)))));
    let x0 = static_equilibrium(mesh, model, sim, &pins)?;
    let s0 = SimState::at_rest(x0);
    let traj = simulate(mesh, model, &s0, sim, &obs.immobilized, obs.frames())?;
    Ok((s0, traj))
}

/// Spatial concentration of control forces: max over `near` of the
/// per-vertex RMS magnitude, over its mean on the free vertices.
pub fn force_concentration(cf: &ControlForces, near: &[usize], immobilized: &[usize]) -> f64 {
    let rms = cf.per_vertex_rms();
    let free: Vec<f64> = rms.iter().enumerate().filter(|(v, _)| !immobilized.contains(v)).map(|(_, r)| *r).collect();
    let mean = free.iter().sum::<f64>() / free.len().max(1) as f64;
    let peak = near.iter().map(|&v| rms[v]).fold(0.0, f64::max);
    if mean > 0.0 {
        peak / mean
    } else {
        0.0
    }
}

/// Result of the outer loop.
#[derive(Debug, Clone)]
pub struct LearningOutcome {
    pub net: Option<Mlp>,
    pub best_iteration: usize,
    pub best_error: f64,
    pub records: Vec<IterationRecord>,
}

pub fn run_learning(mesh: &TetMesh, obs: &Observation, cfg: &LearningConfig, sim: &SimConfig) -> Result<LearningOutcome> {
    run_learning_from(mesh, obs, cfg, sim, LearningState::default(), &mut |_| Ok(()))
}

/// The loop, continued from `state`; `checkpoint` sees the state after
/// every completed iteration.
pub fn run_learning_from(
    mesh: &TetMesh,
    obs: &Observation,
    cfg: &LearningConfig,
    sim: &SimConfig,
    mut state: LearningState,
    checkpoint: &mut dyn FnMut(&LearningState) -> Result<()>,
) -> Result<LearningOutcome> {
    cfg.validate()?;
    sim.validate()?;
    obs.validate(mesh.num_verts())?;
    let points = select_constraint_points(mesh, &obs.observed, cfg.constraint_points.min(obs.observed.len()), cfg.seed)?;
    let near = mesh.one_ring(&points);
    let targets = obs.target_trajectory(mesh)?;
    let point_targets = obs.targets_for(&points)?;

    while !state.finished {
        let it = state.next_iteration();
        let start = Instant::now();
        let model = MaterialModel::neural(cfg.nominal, state.current.clone())?;

        let (s0, traj) = forward_from_observation(mesh, &model, sim, obs).map_err(|e| e.in_stage("forward simulation", it))?;
        let error = obs.max_error(&traj, mesh)?;
        if !error.is_finite() {
            return Err(Error::NonFinite(format!("forward error in iteration {it}")).in_stage("forward simulation", it));
        }
        if error < state.best_error {
            state.best_error = error;
            state.best_iteration = it;
            state.best = state.current.clone();
        }
        log::info!("iteration {it}: forward error {error:.4}% of size");

        let since_best = it - state.best_iteration;
        let forces_stalled = {
            let norms: Vec<f64> = state
                .records
                .iter()
                .rev()
                .take(cfg.stagnation)
                .filter_map(|r| r.update.as_ref().map(|u| u.control_force_norm))
                .collect();
            norms.len() == cfg.stagnation && norms.windows(2).all(|w| w[0] >= w[1])
        };
        let done = error <= cfg.tolerance || it >= cfg.max_outer || (since_best >= cfg.stagnation && forces_stalled);

        let update = if done {
            None
        } else {
            let (u, net) = update(mesh, obs, cfg, sim, &model, &s0, &targets, &points, &near, &point_targets, error, it)?;
            if net.is_some() {
                state.current = net;
            }
            Some(u)
        };
        state.records.push(IterationRecord {
            iteration: it,
            error,
            update,
            wall_time: start.elapsed().as_secs_f64(),
        });
        state.finished = done;
        checkpoint(&state)?;
    }
    Ok(LearningOutcome {
        net: state.best,
        best_iteration: state.best_iteration,
        best_error: state.best_error,
        records: state.records,
    })
}

#[allow(clippy::too_many_arguments)]
fn update(
    mesh: &TetMesh,
    obs: &Observation,
    cfg: &LearningConfig,
    sim: &SimConfig,
    model: &MaterialModel,
    s0: &SimState,
    targets: &Trajectory,
    points: &[usize],
    near: &[usize],
    point_targets: &[Vec<f64>],
    error: f64,
    it: usize,
) -> Result<(UpdateRecord, Option<Mlp>)> {
    let frames = obs.frames();
    let seed = simulate_constrained(mesh, model, s0, sim, &obs.immobilized, points, targets, frames)
        .map_err(|e| e.in_stage("constrained simulation", it))?;
    let basis = build_basis(&seed, &obs.immobilized, &cfg.basis).map_err(|e| e.in_stage("reduced basis", it))?;
    let mut problem = SpacetimeProblem::new(mesh, model, sim, &obs.immobilized, basis, points, point_targets.to_vec(), &seed)?;
    let seed_forces = problem.control_forces_of(&seed.frames).map_err(|e| e.in_stage("space-time", it))?;
    let (z, report) = problem.optimize(&cfg.spacetime).map_err(|e| e.in_stage("space-time", it))?;
    let forces = problem.control_forces(&z).map_err(|e| e.in_stage("space-time", it))?;
    let positions = problem.trajectory(&z)?.frames;

    // Retrain with a smaller step until the new model does not diverge.
    let mut zeta = cfg.zeta_p;
    let mut attempt = 0;
    let (net, data, treport, trial_error) = loop {
        let data = recover_trajectory(mesh, model, sim, &positions, &forces, &obs.immobilized, model.net.as_ref(), zeta)
            .map_err(|e| e.in_stage("stress recovery", it))?;
        if data.is_empty() {
            return Err(Error::invalid("no frame carries control forces").in_stage("stress recovery", it));
        }
        let tcfg = TrainConfig {
            seed: cfg.training_seed(it),
            ..cfg.training.clone()
        };
        let (net, treport) = train(&data, cfg.width, &tcfg).map_err(|e| e.in_stage("training", it))?;
        let trial = MaterialModel::neural(cfg.nominal, Some(net.clone()))?;
        let trial_error = forward_from_observation(mesh, &trial, sim, obs)
            .ok()
            .and_then(|(_, t)| obs.max_error(&t, mesh).ok())
            .filter(|e| e.is_finite())
            .unwrap_or(f64::INFINITY);
        if trial_error <= cfg.divergence * error {
            break (Some(net), data, treport, trial_error);
        }
        if attempt == cfg.max_backoff {
            log::warn!("iteration {it}: update diverges even at zeta_p {zeta:.3e}; keeping the current network");
            break (None, data, treport, trial_error);
        }
        log::info!("iteration {it}: update diverges (error {trial_error:.3e}%), zeta_p {zeta:.3e} -> {:.3e}", zeta / 2.0);
        zeta /= 2.0;
        attempt += 1;
    };
    let last = report.iterations.last();
    let u = UpdateRecord {
        seed_physics_norm: report.seed_physics_norm,
        seed_position_norm: report.seed_position_norm,
        physics_norm: last.map_or(report.seed_physics_norm, |r| r.physics_norm),
        position_norm: last.map_or(report.seed_position_norm, |r| r.position_norm),
        lambda_pos: report.lambda_pos,
        spacetime_iterations: report.iterations.len(),
        control_force_norm: forces.norm(),
        seed_concentration: force_concentration(&seed_forces, near, &obs.immobilized),
        concentration: force_concentration(&forces, near, &obs.immobilized),
        training_samples: data.len(),
        training_loss: treport.best_validation_loss,
        training_epochs: treport.epochs_run,
        zeta_p: zeta,
        trial_error,
    };
    log::info!(
        "iteration {it}: |C_f| {:.3e} -> {:.3e}, control force {:.3e} N, {} samples, loss {:.3e}",
        u.seed_physics_norm,
        u.physics_norm,
        u.control_force_norm,
        u.training_samples,
        u.training_loss
    );
    Ok((u, net))
}
