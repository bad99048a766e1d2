use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::basis::ReducedBasis;
use crate::error::{Error, Result};
use crate::mesh::TetMesh;
use crate::numerics::{lsqr, CsrMatrix, LinearOperator, LsqrOptions};
use crate::simulator::{assemble, AssemblyRequest, DofMap, MaterialModel, SimConfig, Trajectory};

const ZETA_MIN: f64 = 0.1;
const ZETA_MAX: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpacetimeOptions {
    pub max_outer: usize,
    /// Stop when the relative decrease of the combined residual falls below this.
    pub tol: f64,
    /// Initial step damping, clamped to [0.1, 0.5].
    pub zeta: f64,
    /// Position-constraint weight; `None` balances `‖C_z‖ = ‖C_f‖` at the seed.
    pub lambda_pos: Option<f64>,
    pub lsqr_max_iter: usize,
    pub lsqr_tol: f64,
}

impl Default for SpacetimeOptions {
    fn default() -> Self {
        SpacetimeOptions {
            max_outer: 10,
            tol: 1e-3,
            zeta: 0.3,
            lambda_pos: None,
            lsqr_max_iter: 200,
            lsqr_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub physics_norm: f64,
    pub position_norm: f64,
    pub step_scale: f64,
    pub lsqr_iterations: usize,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpacetimeReport {
    pub lambda_pos: f64,
    pub seed_physics_norm: f64,
    pub seed_position_norm: f64,
    pub iterations: Vec<IterationReport>,
}

/// Per-frame full-space control forces; frames 0 and 1 are not optimized
/// and carry zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlForces {
    pub frames: Vec<Vec<f64>>,
}

impl ControlForces {
    /// Root-mean-square over frames of each vertex's force magnitude.
    pub fn per_vertex_rms(&self) -> Vec<f64> {
        let n = self.frames.first().map_or(0, |f| f.len() / 3);
        let t = self.frames.len().max(1) as f64;
        (0..n)
            .map(|v| {
                let s: f64 = self
                    .frames
                    .iter()
                    .map(|f| (0..3).map(|c| f[3 * v + c].powi(2)).sum::<f64>())
                    .sum();
                (s / t).sqrt()
            })
            .collect()
    }

    pub fn norm(&self) -> f64 {
        self.frames.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub struct SpacetimeProblem<'a> {
    mesh: &'a TetMesh,
    model: &'a MaterialModel,
    cfg: &'a SimConfig,
    pub basis: ReducedBasis,
    constraint_dofs: Vec<usize>,
    /// Observed constraint-point positions per frame (3 per point).
    targets: Vec<Vec<f64>>,
    pub lambda_pos: f64,
    pub z_seed: Vec<DVector<f64>>,
    /// Lumped masses with zeros on immobilized dofs.
    mass: Vec<f64>,
}

struct Linearization {
    k: Vec<CsrMatrix>,
    d: Vec<CsrMatrix>,
}

impl<'a> SpacetimeProblem<'a> {
    /// `targets[i]` holds the observed positions of `constraint_points` at
    /// frame `i`; the seed is projected onto the basis.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mesh: &'a TetMesh,
        model: &'a MaterialModel,
        cfg: &'a SimConfig,
        immobilized: &[usize],
        basis: ReducedBasis,
        constraint_points: &[usize],
        targets: Vec<Vec<f64>>,
        seed: &Trajectory,
    ) -> Result<Self> {
        let frames = seed.len().min(targets.len());
        if frames < 3 {
            return Err(Error::invalid("space-time problem needs at least 3 frames"));
        }
        if basis.dim() != mesh.num_dofs() {
            return Err(Error::ShapeMismatch("basis dimension differs from mesh dofs".into()));
        }
        if targets.iter().any(|t| t.len() != 3 * constraint_points.len()) {
            return Err(Error::ShapeMismatch("each target frame needs 3 values per constraint point".into()));
        }
        let dofs = DofMap::new(mesh.num_verts(), immobilized);
        let mass = mesh
            .mass_diagonal()
            .into_iter()
            .zip(&dofs.fixed)
            .map(|(m, f)| if *f { 0.0 } else { m })
            .collect();
        let z_seed = seed.frames[..frames].iter().map(|x| basis.project(x)).collect();
        Ok(SpacetimeProblem {
            mesh,
            model,
            cfg,
            basis,
            constraint_dofs: constraint_points.iter().flat_map(|&v| [3 * v, 3 * v + 1, 3 * v + 2]).collect(),
            targets: targets[..frames].to_vec(),
            lambda_pos: 1.0,
            z_seed,
            mass,
        })
    }

    pub fn frames(&self) -> usize {
        self.z_seed.len()
    }

    fn h(&self) -> f64 {
        self.cfg.h
    }

    /// Full positions for a reduced trajectory.
    pub fn trajectory(&self, z: &[DVector<f64>]) -> Result<Trajectory> {
        Trajectory::new(self.h(), z.iter().map(|zi| self.basis.expand(zi)).collect())
    }

    /// Unprojected residual `h⁻²M(x₋ − 2x + x₊) − f(x₊, v₊)` with
    /// `v₊ = (x₊ − x)/h`, zero on immobilized dofs.
    fn full_residual(&self, xp: &[f64], x: &[f64], xn: &[f64], stiffness: bool) -> Result<(Vec<f64>, Option<(CsrMatrix, CsrMatrix)>)> {
        let h = self.h();
        let v: Vec<f64> = xn.iter().zip(x).map(|(a, b)| (a - b) / h).collect();
        let req = AssemblyRequest {
            stiffness,
            stress_basis: false,
        };
        let a = assemble(self.mesh, self.model, xn, &v, self.cfg, req)?;
        let r = (0..x.len())
            .map(|i| {
                if self.mass[i] == 0.0 {
                    0.0
                } else {
                    self.mass[i] * (xp[i] - 2.0 * x[i] + xn[i]) / (h * h) - a.f[i]
                }
            })
            .collect();
        Ok((r, a.k.zip(a.d)))
    }

    /// Reduced physics constraint `C_f` for the frame triple.
    pub fn physics_residual(&self, z_prev: &DVector<f64>, z: &DVector<f64>, z_next: &DVector<f64>) -> Result<DVector<f64>> {
        let (xp, x, xn) = (self.basis.expand(z_prev), self.basis.expand(z), self.basis.expand(z_next));
        let (r, _) = self.full_residual(&xp, &x, &xn, false)?;
        Ok(self.basis.phi.tr_mul(&DVector::from_vec(r)))
    }

    /// `λ (S Φ z − s_i)`.
    pub fn position_residual(&self, z: &DVector<f64>, frame: usize) -> DVector<f64> {
        let x = self.basis.expand(z);
        DVector::from_iterator(
            self.constraint_dofs.len(),
            self.constraint_dofs
                .iter()
                .zip(&self.targets[frame])
                .map(|(&d, s)| self.lambda_pos * (x[d] - s)),
        )
    }

    /// Stacked residuals over frames 2..T: physics blocks then position blocks.
    fn residuals(&self, z: &[DVector<f64>], linearize: bool) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>, Option<Linearization>)> {
        let t = self.frames();
        let xs: Vec<Vec<f64>> = z.iter().map(|zi| self.basis.expand(zi)).collect();
        let mut cf = Vec::with_capacity(t - 2);
        let mut lin = linearize.then(|| Linearization {
            k: Vec::with_capacity(t - 2),
            d: Vec::with_capacity(t - 2),
        });
        for i in 1..t - 1 {
            let (r, kd) = self
                .full_residual(&xs[i - 1], &xs[i], &xs[i + 1], linearize)
                .map_err(|e| e.in_stage("space-time residual", i + 1))?;
            cf.push(self.basis.phi.tr_mul(&DVector::from_vec(r)));
            if let (Some(l), Some((k, d))) = (lin.as_mut(), kd) {
                l.k.push(k);
                l.d.push(d);
            }
        }
        let cz = (2..t).map(|j| self.position_residual(&z[j], j)).collect();
        Ok((cf, cz, lin))
    }

    /// Control forces `h⁻²MΦ(z₋ − 2z + z₊) − B p_n − f_ext` at every frame.
    pub fn control_forces(&self, z: &[DVector<f64>]) -> Result<ControlForces> {
        let xs: Vec<Vec<f64>> = z.iter().map(|zi| self.basis.expand(zi)).collect();
        self.control_forces_of(&xs)
    }

    /// The same residual for full-space frames (e.g. the unprojected seed).
    pub fn control_forces_of(&self, xs: &[Vec<f64>]) -> Result<ControlForces> {
        if xs.iter().any(|x| x.len() != self.mesh.num_dofs()) {
            return Err(Error::ShapeMismatch("frames must have 3N entries".into()));
        }
        let n = self.mesh.num_dofs();
        let mut frames = vec![vec![0.0; n]; 2.min(xs.len())];
        for j in 2..xs.len() {
            frames.push(self.full_residual(&xs[j - 2], &xs[j - 1], &xs[j], false)?.0);
        }
        Ok(ControlForces { frames })
    }

    /// Damped Gauss-Newton on `[C_f; C_z]` with `z₀, z₁` held at the seed.
    pub fn optimize(&mut self, opts: &SpacetimeOptions) -> Result<(Vec<DVector<f64>>, SpacetimeReport)> {
        let t = self.frames();
        let k = self.basis.k();
        let mut z = self.z_seed.clone();

        self.lambda_pos = 1.0;
        let (cf, cz, _) = self.residuals(&z, false)?;
        let seed_cf = block_norm(&cf);
        let seed_mismatch = block_norm(&cz);
        self.lambda_pos = match opts.lambda_pos {
            Some(l) => l,
            None => {
                let floor = 1e-9 * self.mesh.object_size();
                if seed_cf > 0.0 {
                    seed_cf / seed_mismatch.max(floor)
                } else {
                    1.0
                }
            }
        };
        let mut report = SpacetimeReport {
            lambda_pos: self.lambda_pos,
            seed_physics_norm: seed_cf,
            seed_position_norm: self.lambda_pos * seed_mismatch,
            iterations: Vec::new(),
        };

        let (mut cf, mut cz, mut lin) = self.residuals(&z, true)?;
        let mut total = combined(&cf, &cz);
        let mut zeta = opts.zeta.clamp(ZETA_MIN, ZETA_MAX);
        for it in 0..opts.max_outer {
            if total == 0.0 {
                break;
            }
            let start = Instant::now();
            let lin_now = lin.take().expect("linearized at the current iterate");
            let op = GaussNewtonOperator {
                phi: &self.basis.phi,
                mass: &self.mass,
                lin: &lin_now,
                h: self.h(),
                lambda: self.lambda_pos,
                sel: &self.constraint_dofs,
                frames: t,
                k,
            };
            let rhs: Vec<f64> = cf.iter().chain(&cz).flat_map(|b| b.iter().map(|v| -v)).collect();
            let sol = lsqr(
                &op,
                &rhs,
                &LsqrOptions {
                    tol: opts.lsqr_tol,
                    max_iter: Some(opts.lsqr_max_iter),
                },
            );
            let dz = &sol.x;

            let mut accepted = None;
            loop {
                let trial: Vec<DVector<f64>> = z
                    .iter()
                    .enumerate()
                    .map(|(j, zj)| {
                        if j < 2 {
                            zj.clone()
                        } else {
                            zj + zeta * DVector::from_column_slice(&dz[(j - 2) * k..(j - 1) * k])
                        }
                    })
                    .collect();
                match self.residuals(&trial, false) {
                    Ok((tcf, tcz, _)) if combined(&tcf, &tcz) < total => {
                        accepted = Some(trial);
                        break;
                    }
                    Ok(_) | Err(Error::InvertedElement { .. }) | Err(Error::Stage { .. }) => {}
                    Err(e) => return Err(e),
                }
                if zeta <= ZETA_MIN {
                    break;
                }
                zeta = (zeta * 0.5).max(ZETA_MIN);
            }
            let Some(trial) = accepted else {
                log::debug!("space-time: step rejected at iteration {it}, stopping");
                break;
            };
            z = trial;
            let (ncf, ncz, nlin) = self.residuals(&z, true)?;
            let new_total = combined(&ncf, &ncz);
            let improvement = (total - new_total) / total;
            cf = ncf;
            cz = ncz;
            lin = nlin;
            total = new_total;
            report.iterations.push(IterationReport {
                iteration: it,
                physics_norm: block_norm(&cf),
                position_norm: block_norm(&cz),
                step_scale: zeta,
                lsqr_iterations: sol.iterations,
                wall_time: start.elapsed().as_secs_f64(),
            });
            log::debug!(
                "space-time it {it}: |C_f| {:.4e} |C_z| {:.4e} zeta {zeta} lsqr {}",
                block_norm(&cf),
                block_norm(&cz),
                sol.iterations
            );
            if improvement < opts.tol {
                break;
            }
        }
        Ok((z, report))
    }
}

fn block_norm(blocks: &[DVector<f64>]) -> f64 {
    blocks.iter().map(|b| b.norm_squared()).sum::<f64>().sqrt()
}

fn combined(cf: &[DVector<f64>], cz: &[DVector<f64>]) -> f64 {
    (block_norm(cf).powi(2) + block_norm(cz).powi(2)).sqrt()
}

/// Jacobian of the stacked residual w.r.t. `z₂..z_{T−1}`, applied through
/// `Φ`, the lumped mass and the per-frame sparse `K`, `D` without forming
/// their reduced products.
struct GaussNewtonOperator<'a> {
    phi: &'a DMatrix<f64>,
    mass: &'a [f64],
    lin: &'a Linearization,
    h: f64,
    lambda: f64,
    sel: &'a [usize],
    frames: usize,
    k: usize,
}

impl GaussNewtonOperator<'_> {
    fn physics_rows(&self) -> usize {
        (self.frames - 2) * self.k
    }
}

impl LinearOperator for GaussNewtonOperator<'_> {
    fn nrows(&self) -> usize {
        self.physics_rows() + (self.frames - 2) * self.sel.len()
    }

    fn ncols(&self) -> usize {
        (self.frames - 2) * self.k
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let (t, k, h) = (self.frames, self.k, self.h);
        let n = self.phi.nrows();
        // Full-space perturbations per frame; frames 0 and 1 are fixed.
        let mut ys = vec![DVector::zeros(n); t];
        for j in 2..t {
            ys[j] = self.phi * DVector::from_column_slice(&x[(j - 2) * k..(j - 1) * k]);
        }
        for i in 1..t - 1 {
            let j = i + 1;
            let kx = self.lin.k[i - 1].mul_vec(ys[j].as_slice());
            let dv: Vec<f64> = (0..n).map(|r| (ys[j][r] - ys[i][r]) / h).collect();
            let dx = self.lin.d[i - 1].mul_vec(&dv);
            let r = DVector::from_fn(n, |q, _| {
                self.mass[q] * (ys[i - 1][q] - 2.0 * ys[i][q] + ys[j][q]) / (h * h) - kx[q] - dx[q]
            });
            let out = self.phi.tr_mul(&r);
            y[(i - 1) * k..i * k].copy_from_slice(out.as_slice());
        }
        let p0 = self.physics_rows();
        let c = self.sel.len();
        for j in 2..t {
            for (s, &d) in self.sel.iter().enumerate() {
                y[p0 + (j - 2) * c + s] = self.lambda * ys[j][d];
            }
        }
    }

    fn apply_transpose(&self, y: &[f64], x: &mut [f64]) {
        let (t, k, h) = (self.frames, self.k, self.h);
        let n = self.phi.nrows();
        let mut g = vec![vec![0.0; n]; t];
        for i in 1..t - 1 {
            let j = i + 1;
            let q = self.phi * DVector::from_column_slice(&y[(i - 1) * k..i * k]);
            let ktq = self.lin.k[i - 1].mul_transpose_vec(q.as_slice());
            let dtq = self.lin.d[i - 1].mul_transpose_vec(q.as_slice());
            for r in 0..n {
                let mq = self.mass[r] * q[r] / (h * h);
                g[i - 1][r] += mq;
                g[i][r] += -2.0 * mq + dtq[r] / h;
                g[j][r] += mq - ktq[r] - dtq[r] / h;
            }
        }
        let p0 = self.physics_rows();
        let c = self.sel.len();
        for j in 2..t {
            for (s, &d) in self.sel.iter().enumerate() {
                g[j][d] += self.lambda * y[p0 + (j - 2) * c + s];
            }
        }
        for j in 2..t {
            let out = self.phi.tr_mul(&DVector::from_vec(std::mem::take(&mut g[j])));
            x[(j - 2) * k..(j - 1) * k].copy_from_slice(out.as_slice());
        }
    }
}
