use super::assembly::{assemble, Assembly, AssemblyRequest};
use super::{MaterialModel, SimConfig, SimState, Trajectory};
use crate::error::{Error, Result};
use crate::mesh::TetMesh;
use crate::numerics::{solve_linear, CsrMatrix, TripletBuilder, Vec3};

/// Partition of the 3N dofs into fixed (immobilized) and free ones.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    pub fixed: Vec<bool>,
    pub free: Vec<usize>,
}

impl DofMap {
    pub fn new(num_verts: usize, fixed_verts: &[usize]) -> Self {
        let mut fixed = vec![false; 3 * num_verts];
        for &v in fixed_verts {
            fixed[3 * v..3 * v + 3].iter_mut().for_each(|f| *f = true);
        }
        let free = (0..3 * num_verts).filter(|&i| !fixed[i]).collect();
        DofMap { fixed, free }
    }

    /// Global-to-local index map (`usize::MAX` for fixed dofs).
    pub fn local(&self) -> Vec<usize> {
        let mut out = vec![usize::MAX; self.fixed.len()];
        for (l, &g) in self.free.iter().enumerate() {
            out[g] = l;
        }
        out
    }
}

const STIFFNESS: AssemblyRequest = AssemblyRequest {
    stiffness: true,
    stress_basis: false,
};

/// Rows/columns of `M - hD - h²K` restricted to `rows` x `cols`.
fn system_block(mass: &[f64], asm: &Assembly, h: f64, rows: &[usize], cols: &[usize]) -> CsrMatrix {
    let n = mass.len();
    let mut col_local = vec![usize::MAX; n];
    for (l, &g) in cols.iter().enumerate() {
        col_local[g] = l;
    }
    let k = asm.k.as_ref().expect("stiffness requested");
    let d = asm.d.as_ref().expect("stiffness requested");
    let mut t = TripletBuilder::with_capacity(rows.len(), cols.len(), 2 * k.nnz() * rows.len() / n.max(1) + rows.len());
    for (lr, &r) in rows.iter().enumerate() {
        if col_local[r] != usize::MAX {
            t.push(lr, col_local[r], mass[r]);
        }
        for (c, val) in k.row(r) {
            if col_local[c] != usize::MAX {
                t.push(lr, col_local[c], -h * h * val);
            }
        }
        for (c, val) in d.row(r) {
            if col_local[c] != usize::MAX {
                t.push(lr, col_local[c], -h * val);
            }
        }
    }
    t.build()
}

/// One semi-implicit backward Euler step: `(M - hD - h²K) Δv = h (f + hKv)`.
pub fn step(mesh: &TetMesh, model: &MaterialModel, state: &SimState, cfg: &SimConfig, immobilized: &[usize]) -> Result<SimState> {
    constrained_step(mesh, model, state, cfg, immobilized, &[], None)
}

/// Position targets for the previous, current and next frame (full 3N
/// vectors; only constrained dofs are read).
pub type Targets<'a> = (&'a [f64], &'a [f64], &'a [f64]);

/// Step with the `constrained` vertices driven along `targets`: their
/// velocity change is the second central difference of the targets and the
/// remaining free dofs solve `A_uu Δv_u = h (f + hKv)_u - A_uc Δv_c`.
pub fn constrained_step(
    mesh: &TetMesh,
    model: &MaterialModel,
    state: &SimState,
    cfg: &SimConfig,
    immobilized: &[usize],
    constrained: &[usize],
    targets: Option<Targets<'_>>,
) -> Result<SimState> {
    cfg.validate()?;
    let h = cfg.h;
    let n = mesh.num_dofs();
    let dofs = DofMap::new(mesh.num_verts(), immobilized);
    let mut is_c = vec![false; n];
    for &vtx in constrained {
        for a in 0..3 {
            if !dofs.fixed[3 * vtx + a] {
                is_c[3 * vtx + a] = true;
            }
        }
    }
    let c_dofs: Vec<usize> = dofs.free.iter().copied().filter(|&i| is_c[i]).collect();
    let u_dofs: Vec<usize> = dofs.free.iter().copied().filter(|&i| !is_c[i]).collect();
    if !c_dofs.is_empty() && targets.is_none() {
        return Err(Error::invalid("constrained step needs position targets"));
    }

    let mut next = state.clone();
    next.t += h;
    let mut dv_c = vec![0.0; n];
    if let Some((prev, cur, nxt)) = targets {
        if prev.len() != n || cur.len() != n || nxt.len() != n {
            return Err(Error::ShapeMismatch("target frames must have 3N entries".into()));
        }
        for &i in &c_dofs {
            dv_c[i] = (prev[i] - 2.0 * cur[i] + nxt[i]) / h;
            next.x[i] = nxt[i];
            next.v[i] = (nxt[i] - cur[i]) / h;
        }
    }

    if !u_dofs.is_empty() {
        let asm = assemble(mesh, model, &state.x, &state.v, cfg, STIFFNESS)?;
        let mass = mesh.mass_diagonal();
        let a_uu = system_block(&mass, &asm, h, &u_dofs, &u_dofs);
        // h(f + hKv): the stiffness acts on the end-of-step velocity, so an
        // exact trajectory satisfies the end-of-step force balance to second order.
        let kv = asm.k.as_ref().expect("stiffness requested").mul_vec(&state.v);
        let mut rhs: Vec<f64> = u_dofs.iter().map(|&i| h * (asm.f[i] + h * kv[i])).collect();
        if !c_dofs.is_empty() {
            let a_uc = system_block(&mass, &asm, h, &u_dofs, &c_dofs);
            let dvc: Vec<f64> = c_dofs.iter().map(|&i| dv_c[i]).collect();
            for (r, val) in a_uc.mul_vec(&dvc).into_iter().enumerate() {
                rhs[r] -= val;
            }
        }
        let dv = solve_linear(&a_uu, &rhs, &cfg.solver)?;
        for (l, &i) in u_dofs.iter().enumerate() {
            next.v[i] = state.v[i] + dv[l];
            next.x[i] = state.x[i] + h * next.v[i];
        }
    }
    for (i, &f) in dofs.fixed.iter().enumerate() {
        if f {
            next.v[i] = 0.0;
            next.x[i] = state.x[i];
        }
    }
    Ok(next)
}

/// Unconstrained forward simulation producing `frames` frames (including
/// the initial state).
pub fn simulate(
    mesh: &TetMesh,
    model: &MaterialModel,
    initial: &SimState,
    cfg: &SimConfig,
    immobilized: &[usize],
    frames: usize,
) -> Result<Trajectory> {
    let mut state = initial.clone();
    let mut xs = vec![state.x.clone()];
    let mut vs = vec![state.v.clone()];
    for i in 1..frames {
        state = step(mesh, model, &state, cfg, immobilized).map_err(|e| e.in_stage("simulate", i))?;
        xs.push(state.x.clone());
        vs.push(state.v.clone());
    }
    Trajectory::with_velocities(cfg.h, xs, vs)
}

/// Forward simulation with `constrained` vertices following `targets`
/// (which must have at least as many frames as requested).
pub fn simulate_constrained(
    mesh: &TetMesh,
    model: &MaterialModel,
    initial: &SimState,
    cfg: &SimConfig,
    immobilized: &[usize],
    constrained: &[usize],
    targets: &Trajectory,
    frames: usize,
) -> Result<Trajectory> {
    if targets.len() < frames {
        return Err(Error::ShapeMismatch(format!(
            "targets have {} frames, {frames} requested",
            targets.len()
        )));
    }
    let h = cfg.h;
    let first_prev: Vec<f64> = targets.frames[0].iter().zip(&initial.v).map(|(x, v)| x - h * v).collect();
    let mut state = initial.clone();
    for &vtx in constrained {
        for a in 0..3 {
            state.x[3 * vtx + a] = targets.frames[0][3 * vtx + a];
        }
    }
    let mut xs = vec![state.x.clone()];
    let mut vs = vec![state.v.clone()];
    for i in 0..frames.saturating_sub(1) {
        let prev = if i == 0 { &first_prev } else { &targets.frames[i - 1] };
        let t = (prev.as_slice(), targets.frames[i].as_slice(), targets.frames[i + 1].as_slice());
        state = constrained_step(mesh, model, &state, cfg, immobilized, constrained, Some(t))
            .map_err(|e| e.in_stage("constrained simulation", i + 1))?;
        xs.push(state.x.clone());
        vs.push(state.v.clone());
    }
    Trajectory::with_velocities(h, xs, vs)
}

const NEWTON_MAX_ITER: usize = 200;
const MAX_LOAD_STEPS: usize = 64;

/// Static equilibrium with the `pinned` vertices placed at the given
/// positions, by damped Newton from the rest pose (with load stepping of the
/// pinned displacement when a direct solve fails).
pub fn static_equilibrium(mesh: &TetMesh, model: &MaterialModel, cfg: &SimConfig, pinned: &[(usize, Vec3)]) -> Result<Vec<f64>> {
    if pinned.is_empty() {
        return Err(Error::invalid("static equilibrium needs at least one pinned vertex"));
    }
    let rest = mesh.rest_positions();
    let tol = 1e-8 * mesh.total_mass() * Vec3::from(cfg.gravity).norm().max(1.0);
    let ids: Vec<usize> = pinned.iter().map(|p| p.0).collect();
    let dofs = DofMap::new(mesh.num_verts(), &ids);
    let mut load_steps = 1;
    let mut last_err = None;
    while load_steps <= MAX_LOAD_STEPS {
        let mut x = rest.clone();
        let mut ok = true;
        for s in 1..=load_steps {
            let frac = s as f64 / load_steps as f64;
            for (vtx, target) in pinned {
                for a in 0..3 {
                    let r = rest[3 * vtx + a];
                    x[3 * vtx + a] = r + frac * (target[a] - r);
                }
            }
            match newton(mesh, model, cfg, &dofs, x.clone(), tol) {
                Ok(sol) => x = sol,
                Err(e) => {
                    last_err = Some(e);
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return Ok(x);
        }
        log::debug!("static equilibrium: retrying with {} load steps", 2 * load_steps);
        load_steps *= 2;
    }
    Err(last_err.expect("at least one attempt"))
}

fn newton(mesh: &TetMesh, model: &MaterialModel, cfg: &SimConfig, dofs: &DofMap, mut x: Vec<f64>, tol: f64) -> Result<Vec<f64>> {
    let zero_v = vec![0.0; x.len()];
    let residual = |x: &[f64]| -> Result<(f64, Assembly)> {
        let a = assemble(mesh, model, x, &zero_v, cfg, STIFFNESS)?;
        let r = dofs.free.iter().map(|&i| a.f[i].abs()).fold(0.0, f64::max);
        Ok((r, a))
    };
    let (mut r, mut asm) = residual(&x)?;
    for _ in 0..NEWTON_MAX_ITER {
        if r <= tol {
            return Ok(x);
        }
        let k = asm.k.as_ref().unwrap().select(&dofs.free, &dofs.free);
        let neg_k = scaled(&k, -1.0);
        let rhs: Vec<f64> = dofs.free.iter().map(|&i| asm.f[i]).collect();
        let dx = solve_linear(&neg_k, &rhs, &cfg.solver)?;
        let mut alpha = 1.0;
        loop {
            let mut trial = x.clone();
            for (l, &i) in dofs.free.iter().enumerate() {
                trial[i] += alpha * dx[l];
            }
            match residual(&trial) {
                Ok((rt, at)) if rt < r || alpha < 1e-3 => {
                    x = trial;
                    r = rt;
                    asm = at;
                    break;
                }
                Ok(_) | Err(Error::InvertedElement { .. }) => alpha *= 0.5,
                Err(e) => return Err(e),
            }
        }
    }
    if r <= tol {
        return Ok(x);
    }
    Err(Error::NotConverged {
        method: "newton",
        iterations: NEWTON_MAX_ITER,
        residual: r,
    })
}

fn scaled(a: &CsrMatrix, s: f64) -> CsrMatrix {
    let (nr, nc) = a.shape();
    let mut t = TripletBuilder::with_capacity(nr, nc, a.nnz());
    for r in 0..nr {
        for (c, v) in a.row(r) {
            t.push(r, c, s * v);
        }
    }
    t.build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::materials::{MaterialKind, MaterialParams};
    use crate::mesh::{generate_bar, BarFace};
    use crate::neural::Mlp;

    fn model(kind: MaterialKind, e: f64) -> MaterialModel {
        MaterialModel::truth(MaterialParams::new(kind, e, 0.3).unwrap())
    }

    fn no_gravity() -> SimConfig {
        SimConfig {
            gravity: [0.0; 3],
            ..SimConfig::default()
        }
    }

    #[test]
    fn free_fall_of_a_vanishingly_stiff_element() {
        // With K ≈ 0 the solve reduces to M Δv = h M g.
        let mesh = generate_bar(1, 1, 1, [1.0; 3], 1.0).unwrap();
        let m = model(MaterialKind::Corotational, 1e-30);
        let cfg = SimConfig::default();
        let s = step(&mesh, &m, &SimState::at_rest(mesh.rest_positions()), &cfg, &[]).unwrap();
        for i in 0..s.v.len() {
            let g = cfg.gravity[i % 3];
            assert!((s.v[i] - cfg.h * g).abs() <= 1e-14);
            assert!((s.x[i] - mesh.rest_positions()[i] - cfg.h * cfg.h * g).abs() <= 1e-15);
        }
    }

    #[test]
    fn rest_without_gravity_is_unchanged() {
        let mesh = generate_bar(1, 1, 2, [0.1, 0.1, 0.2], 1000.0).unwrap();
        let s0 = SimState::at_rest(mesh.rest_positions());
        let s1 = step(&mesh, &model(MaterialKind::Corotational, 1e5), &s0, &no_gravity(), &[]).unwrap();
        assert_eq!(s1.x, s0.x);
        assert_eq!(s1.v, s0.v);
    }

    #[test]
    fn step_converges_to_explicit_euler_at_second_order() {
        // One-element stretch: the implicit correction shrinks as h².
        let mesh = TetMesh::build_precomputed(
            vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()],
            vec![[0, 1, 2, 3]],
            10.0,
        )
        .unwrap();
        let m = model(MaterialKind::Stvk, 100.0);
        let mut x = mesh.rest_positions();
        x[3] += 0.1;
        let state = SimState { v: vec![0.0; 12], x, t: 0.0 };
        let mass = mesh.mass_diagonal();
        // Discrepancy of the effective acceleration Δv/h against M⁻¹f.
        let gap = |h: f64| {
            let cfg = SimConfig {
                h,
                solver: crate::numerics::SolverOptions {
                    tol: 1e-14,
                    ..Default::default()
                },
                ..no_gravity()
            };
            let implicit = step(&mesh, &m, &state, &cfg, &[]).unwrap();
            let f = assemble(&mesh, &m, &state.x, &state.v, &cfg, AssemblyRequest::default()).unwrap().f;
            (0..12)
                .map(|i| ((implicit.v[i] - state.v[i]) / h - f[i] / mass[i]).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let (a, b) = (gap(2e-2), gap(1e-2));
        let ratio = a / b;
        assert!(a > 0.0 && ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
    }

    #[test]
    fn linear_momentum_is_conserved_without_gravity() {
        let mesh = generate_bar(1, 1, 2, [0.1, 0.1, 0.2], 1000.0).unwrap();
        let m = model(MaterialKind::Corotational, 1e5);
        let mut state = SimState::at_rest(mesh.rest_positions());
        for (i, v) in state.v.iter_mut().enumerate() {
            *v = ((i * 7919) % 13) as f64 * 0.01 - 0.06;
        }
        let mass = mesh.mass_diagonal();
        let momentum = |s: &SimState| -> Vec3 {
            let mut p = Vec3::zeros();
            for i in 0..s.v.len() {
                p[i % 3] += mass[i] * s.v[i];
            }
            p
        };
        let p0 = momentum(&state);
        for _ in 0..5 {
            state = step(&mesh, &m, &state, &no_gravity(), &[]).unwrap();
        }
        let scale: f64 = mass.iter().zip(&state.v).map(|(m, v)| (m * v).abs()).sum();
        assert!((momentum(&state) - p0).norm() <= 1e-8 * scale);
    }

    #[test]
    fn constrained_step_edge_cases() {
        let mesh = generate_bar(1, 1, 2, [0.1, 0.1, 0.2], 1000.0).unwrap();
        let m = model(MaterialKind::Corotational, 1e5);
        let cfg = SimConfig::default();
        let s0 = SimState::at_rest(mesh.rest_positions());
        let free_step = step(&mesh, &m, &s0, &cfg, &[]).unwrap();
        let same = constrained_step(&mesh, &m, &s0, &cfg, &[], &[], None).unwrap();
        assert_eq!(same, free_step);

        let all: Vec<usize> = (0..mesh.num_verts()).collect();
        let target: Vec<f64> = s0.x.iter().map(|x| x + 0.01).collect();
        let t = (s0.x.as_slice(), s0.x.as_slice(), target.as_slice());
        let driven = constrained_step(&mesh, &m, &s0, &cfg, &[], &all, Some(t)).unwrap();
        assert_eq!(driven.x, target);
    }

    #[test]
    fn constrained_replay_reproduces_free_simulation() {
        let mesh = generate_bar(1, 1, 3, [0.1, 0.1, 0.3], 1000.0).unwrap();
        let m = model(MaterialKind::Corotational, 1e5);
        let cfg = SimConfig {
            solver: crate::numerics::SolverOptions {
                tol: 1e-13,
                ..Default::default()
            },
            ..SimConfig::default()
        };
        let fixed = BarFace::ZMin.vertices(&mesh);
        let mut s0 = SimState::at_rest(mesh.rest_positions());
        for (i, v) in s0.v.iter_mut().enumerate() {
            if !fixed.contains(&(i / 3)) {
                *v = 0.05 * ((i % 5) as f64 - 2.0);
            }
        }
        let free = simulate(&mesh, &m, &s0, &cfg, &fixed, 20).unwrap();
        let driven: Vec<usize> = BarFace::ZMax.vertices(&mesh);
        let replay = simulate_constrained(&mesh, &m, &s0, &cfg, &fixed, &driven, &free, 20).unwrap();
        let err = max_abs_diff(&free, &replay);
        assert!(err < 1e-9, "{err:e}");
    }

    fn max_abs_diff(a: &Trajectory, b: &Trajectory) -> f64 {
        a.frames
            .iter()
            .zip(&b.frames)
            .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
            .fold(0.0, f64::max)
    }

    #[test]
    fn static_equilibrium_cases() {
        let mesh = generate_bar(1, 1, 4, [0.05, 0.05, 0.2], 1000.0).unwrap();
        let m = model(MaterialKind::Corotational, 1e5);
        let fixed = BarFace::ZMin.vertices(&mesh);
        let rest = mesh.rest_positions();
        let at_rest: Vec<(usize, Vec3)> = fixed.iter().map(|&i| (i, mesh.rest()[i])).collect();
        let x = static_equilibrium(&mesh, &m, &no_gravity(), &at_rest).unwrap();
        assert!(x.iter().zip(&rest).all(|(a, b)| (a - b).abs() < 1e-12));

        let cfg = SimConfig::default();
        let x = static_equilibrium(&mesh, &m, &cfg, &at_rest).unwrap();
        let f = assemble(&mesh, &m, &x, &vec![0.0; x.len()], &cfg, AssemblyRequest::default()).unwrap().f;
        let dofs = DofMap::new(mesh.num_verts(), &fixed);
        let r = dofs.free.iter().map(|&i| f[i].abs()).fold(0.0, f64::max);
        assert!(r <= 1e-8 * mesh.total_mass() * 9.81);
        let tip = BarFace::ZMax.vertices(&mesh)[0];
        assert!(x[3 * tip + 1] < rest[3 * tip + 1]);
    }

    #[test]
    fn static_equilibrium_perturbed_by_small_network() {
        let mesh = generate_bar(1, 1, 4, [0.05, 0.05, 0.2], 1000.0).unwrap();
        let params = MaterialParams::new(MaterialKind::Corotational, 1e5, 0.3).unwrap();
        let fixed = BarFace::ZMin.vertices(&mesh);
        let mut pinned: Vec<(usize, Vec3)> = fixed.iter().map(|&i| (i, mesh.rest()[i])).collect();
        for v in BarFace::ZMax.vertices(&mesh) {
            pinned.push((v, mesh.rest()[v] + Vec3::new(0.0, 0.02, 0.0)));
        }
        let cfg = no_gravity();
        let plain = static_equilibrium(&mesh, &MaterialModel::truth(params), &cfg, &pinned).unwrap();
        let mut net = Mlp::new(6, 1).unwrap();
        net.scale_parameters(1e-3);
        let out = net.forward(&Vec3::repeat(1.0), &Vec3::zeros()).norm();
        let with_net = static_equilibrium(&mesh, &MaterialModel::neural(params, Some(net)).unwrap(), &cfg, &pinned).unwrap();
        let (mu, _) = params.lame();
        let bound = 10.0 * out / mu * mesh.object_size();
        let diff = plain.iter().zip(&with_net).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff <= bound, "diff {diff:e} bound {bound:e}");
    }

    #[test]
    fn immobilized_vertices_never_move() {
        let mesh = generate_bar(1, 1, 2, [0.1, 0.1, 0.2], 1000.0).unwrap();
        let fixed = BarFace::ZMin.vertices(&mesh);
        let traj = simulate(
            &mesh,
            &model(MaterialKind::Corotational, 1e4),
            &SimState::at_rest(mesh.rest_positions()),
            &SimConfig::default(),
            &fixed,
            10,
        )
        .unwrap();
        for f in &traj.frames {
            for &v in &fixed {
                for a in 0..3 {
                    assert_eq!(f[3 * v + a], mesh.rest_positions()[3 * v + a]);
                }
            }
        }
    }

    #[test]
    fn step_is_deterministic() {
        let mesh = generate_bar(1, 1, 2, [0.1, 0.1, 0.2], 1000.0).unwrap();
        let m = model(MaterialKind::Neohookean, 1e4);
        let s0 = SimState::at_rest(mesh.rest_positions());
        let a = step(&mesh, &m, &s0, &SimConfig::default(), &[0, 1]).unwrap();
        let b = step(&mesh, &m, &s0, &SimConfig::default(), &[0, 1]).unwrap();
        assert_eq!(a, b);
    }
}
