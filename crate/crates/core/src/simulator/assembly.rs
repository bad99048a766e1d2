use nalgebra::{SMatrix, SVector};

use super::{MaterialModel, NeuralStiffness, SimConfig};
use crate::error::{Error, Result};
use crate::materials::{
    composed_world_stress, principal_stress_differential, stress_gradient, ElementFrame, MaterialKind,
    PrincipalStressJacobian,
};
use crate::mesh::TetMesh;
use crate::numerics::{to_vec9, CsrMatrix, Mat3, Mat9, TripletBuilder};

type Mat9x12 = SMatrix<f64, 9, 12>;
type Mat12 = SMatrix<f64, 12, 12>;
type Vec12 = SVector<f64, 12>;

/// `G = ∂vec(F)/∂(x0, x1, x2, x3)` for an element with inverse rest shape
/// matrix `bm` (column-major vec, 9 x 12).
pub fn element_gradient_operator(bm: &Mat3) -> Mat9x12 {
    let mut g = Mat9x12::zeros();
    for b in 0..3 {
        for a in 0..3 {
            let row = a + 3 * b;
            let mut sum = 0.0;
            for k in 1..4 {
                let w = bm[(k - 1, b)];
                g[(row, 3 * k + a)] = w;
                sum += w;
            }
            g[(row, a)] = -sum;
        }
    }
    g
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AssemblyRequest {
    pub stiffness: bool,
    pub stress_basis: bool,
}

#[derive(Debug, Clone)]
pub struct Assembly {
    /// Elastic + damping + gravity.
    pub f: Vec<f64>,
    pub elastic: Vec<f64>,
    pub frames: Vec<ElementFrame>,
    /// `∂f/∂x` (elastic part).
    pub k: Option<CsrMatrix>,
    /// `∂f/∂v`.
    pub d: Option<CsrMatrix>,
    /// Maps per-element diagonal stresses (3 per element) to vertex forces.
    pub b: Option<CsrMatrix>,
}

/// Result of [`assemble_forces`].
#[derive(Debug, Clone)]
pub struct ForceEval {
    pub f: Vec<f64>,
    pub frames: Vec<ElementFrame>,
    pub b: CsrMatrix,
}

/// Total force, per-element frames and the stress-to-force matrix `B`.
pub fn assemble_forces(mesh: &TetMesh, model: &MaterialModel, x: &[f64], v: &[f64], cfg: &SimConfig) -> Result<ForceEval> {
    let a = assemble(
        mesh,
        model,
        x,
        v,
        cfg,
        AssemblyRequest {
            stiffness: false,
            stress_basis: true,
        },
    )?;
    Ok(ForceEval {
        f: a.f,
        frames: a.frames,
        b: a.b.expect("requested"),
    })
}

pub fn assemble(
    mesh: &TetMesh,
    model: &MaterialModel,
    x: &[f64],
    v: &[f64],
    cfg: &SimConfig,
    req: AssemblyRequest,
) -> Result<Assembly> {
    let n = mesh.num_dofs();
    if x.len() != n || v.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "state has {} / {} entries, mesh needs {n}",
            x.len(),
            v.len()
        )));
    }
    if !x.iter().chain(v).all(|c| c.is_finite()) {
        return Err(Error::NonFinite("simulation state".into()));
    }
    if model.element_scale.as_ref().is_some_and(|s| s.len() != mesh.num_elements()) {
        return Err(Error::ShapeMismatch("one stiffness scale per element is required".into()));
    }
    let params = &model.params;
    let (mu, lambda) = params.lame();
    let rayleigh = params.has_damping();
    let want_k = req.stiffness || (rayleigh && params.beta > 0.0);
    let want_d = req.stiffness;
    let m = mesh.num_elements();

    let mut elastic = vec![0.0; n];
    let mut frames = Vec::with_capacity(m);
    let mut kt = want_k.then(|| TripletBuilder::with_capacity(n, n, 144 * m));
    let mut dt = (want_d && model.net.is_some()).then(|| TripletBuilder::with_capacity(n, n, 144 * m));
    let mut bt = req.stress_basis.then(|| TripletBuilder::with_capacity(n, 3 * m, 36 * m));

    for (e, tet) in mesh.tets().iter().enumerate() {
        let f = mesh.deformation_gradient(x, e);
        let fdot = mesh.deformation_gradient_velocity(v, e);
        let frame = ElementFrame::new(&f, &fdot);
        // Stress and its gradient are linear in (μ, λ), hence in the scale.
        let scale = model.scale(e);
        let p = scale
            * match params.kind {
                MaterialKind::Corotational => composed_world_stress(&frame, mu, lambda, model.net.as_ref()),
                _ => params.piola(&f).map_err(|err| tag_element(err, e))?,
            };
        let w = mesh.volume(e);
        let g = element_gradient_operator(mesh.bm(e));
        let fe: Vec12 = -w * g.transpose() * to_vec9(&p);
        scatter_vec(&mut elastic, tet, &fe);

        if let Some(bt) = bt.as_mut() {
            for k in 0..3 {
                let mode = frame.u.column(k) * frame.v.column(k).transpose();
                let col: Vec12 = -w * g.transpose() * to_vec9(&mode);
                for (li, &vi) in tet.iter().enumerate() {
                    for a in 0..3 {
                        bt.push(3 * vi + a, 3 * e + k, col[3 * li + a]);
                    }
                }
            }
        }

        if want_k {
            let mut dp_df: Mat9 = scale * stress_gradient(params, &f, cfg.gradient).map_err(|err| tag_element(err, e))?;
            let mut dp_dv = Mat9::zeros();
            if let Some(net) = &model.net {
                let j = net.jacobian(&frame.fhat, &frame.fdot_hat);
                let jac = PrincipalStressJacobian {
                    p: net.forward(&frame.fhat, &frame.fdot_hat),
                    dp_dsigma: j.fixed_view::<3, 3>(0, 0).into_owned(),
                    dp_dfdot: j.fixed_view::<3, 3>(0, 3).into_owned(),
                };
                let exact = cfg.neural_stiffness == NeuralStiffness::Exact;
                let (dx, dv) = principal_stress_differential(&frame.svd(), &fdot, &jac, exact);
                dp_df += dx;
                dp_dv = dv;
            }
            let ke: Mat12 = -w * g.transpose() * dp_df * g;
            scatter_mat(kt.as_mut().unwrap(), tet, &ke);
            if let Some(dt) = dt.as_mut() {
                let de: Mat12 = -w * g.transpose() * dp_dv * g;
                scatter_mat(dt, tet, &de);
            }
        }
        frames.push(frame);
    }

    let k = kt.map(TripletBuilder::build);
    let mass = mesh.mass_diagonal();
    let mut f = elastic.clone();
    for (i, fi) in f.iter_mut().enumerate() {
        *fi += mass[i] * cfg.gravity[i % 3];
    }
    let mut d = None;
    if rayleigh {
        // f_d = -αMv + βKv, K = ∂f/∂x (negative semidefinite).
        let kv = k.as_ref().map(|k| k.mul_vec(v)).unwrap_or_else(|| vec![0.0; n]);
        for i in 0..n {
            f[i] += -params.alpha * mass[i] * v[i] + params.beta * kv[i];
        }
    }
    if want_d {
        let mut t = TripletBuilder::with_capacity(n, n, k.as_ref().map_or(n, |k| k.nnz()) + n);
        if let Some(dt) = dt {
            let dn = dt.build();
            for r in 0..n {
                for (c, val) in dn.row(r) {
                    t.push(r, c, val);
                }
            }
        }
        if rayleigh {
            for (i, mi) in mass.iter().enumerate() {
                t.push(i, i, -params.alpha * mi);
            }
            if params.beta > 0.0 {
                let k = k.as_ref().unwrap();
                for r in 0..n {
                    for (c, val) in k.row(r) {
                        t.push(r, c, params.beta * val);
                    }
                }
            }
        }
        d = Some(t.build());
    }
    Ok(Assembly {
        f,
        elastic,
        frames,
        k: if req.stiffness { k } else { None },
        d,
        b: bt.map(TripletBuilder::build),
    })
}

fn tag_element(err: Error, e: usize) -> Error {
    match err {
        Error::InvertedElement { det, .. } => Error::InvertedElement { element: e, det },
        other => other,
    }
}

fn scatter_vec(out: &mut [f64], tet: &[usize; 4], fe: &Vec12) {
    for (li, &vi) in tet.iter().enumerate() {
        for a in 0..3 {
            out[3 * vi + a] += fe[3 * li + a];
        }
    }
}

fn scatter_mat(t: &mut TripletBuilder, tet: &[usize; 4], ke: &Mat12) {
    for (li, &vi) in tet.iter().enumerate() {
        for (lj, &vj) in tet.iter().enumerate() {
            for a in 0..3 {
                for b in 0..3 {
                    t.push(3 * vi + a, 3 * vj + b, ke[(3 * li + a, 3 * lj + b)]);
                }
            }
        }
    }
}
