use std::path::Path;

use nalgebra::SMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Vec3;

pub const CHECKPOINT_SCHEMA: &str = "neural-material/mlp/1";

pub(crate) const BN_EPS: f64 = 1e-5;
const STD_FLOOR: f64 = 1e-8;

/// Per-feature affine standardization `z = (y - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Population statistics of the rows, with `std` floored at 1e-8.
    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, dim: usize) -> Self {
        let n = rows.clone().count().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for r in rows.clone() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        Standardizer {
            mean,
            std: var.into_iter().map(|v| v.sqrt().max(STD_FLOOR)).collect(),
        }
    }

    pub fn apply(&self, y: &[f64], out: &mut [f64]) {
        for i in 0..self.mean.len() {
            out[i] = (y[i] - self.mean[i]) / self.std[i];
        }
    }

    pub fn invert(&self, z: &[f64], out: &mut [f64]) {
        for i in 0..self.mean.len() {
            out[i] = z[i] * self.std[i] + self.mean[i];
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Linear {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows x cols`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn init(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (cols as f64).sqrt();
        Linear {
            rows,
            cols,
            weights: (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect(),
            bias: (0..rows).map(|_| rng.random_range(-bound..bound)).collect(),
        }
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for r in 0..self.rows {
            let w = &self.weights[r * self.cols..(r + 1) * self.cols];
            out[r] = self.bias[r] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(dim: usize) -> Self {
        BatchNorm {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            eps: BN_EPS,
        }
    }

    /// Inference-time affine fold: `y = scale * x + shift`.
    pub fn folded(&self, i: usize) -> (f64, f64) {
        let scale = self.gamma[i] / (self.running_var[i] + self.eps).sqrt();
        (scale, self.beta[i] - scale * self.running_mean[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Hidden {
    pub linear: Linear,
    pub bn: BatchNorm,
}

pub(crate) fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

pub(crate) fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// `[6, H, H, 3]` perceptron; each hidden layer is linear -> batch norm -> ELU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub(crate) schema: String,
    pub(crate) sizes: Vec<usize>,
    pub(crate) hidden: Vec<Hidden>,
    pub(crate) output: Linear,
    pub(crate) input_scaler: Standardizer,
    pub(crate) output_scaler: Standardizer,
    pub(crate) seed: u64,
}

impl Mlp {
    pub const INPUTS: usize = 6;
    pub const OUTPUTS: usize = 3;

    /// Freshly initialized network with identity standardizers.
    pub fn new(width: usize, seed: u64) -> Result<Self> {
        if width == 0 {
            return Err(Error::invalid("hidden width must be >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes = vec![Self::INPUTS, width, width, Self::OUTPUTS];
        let hidden = sizes
            .windows(2)
            .take(2)
            .map(|w| Hidden {
                linear: Linear::init(w[1], w[0], &mut rng),
                bn: BatchNorm::new(w[1]),
            })
            .collect();
        Ok(Mlp {
            schema: CHECKPOINT_SCHEMA.to_string(),
            output: Linear::init(Self::OUTPUTS, width, &mut rng),
            sizes,
            hidden,
            input_scaler: Standardizer::identity(Self::INPUTS),
            output_scaler: Standardizer::identity(Self::OUTPUTS),
            seed,
        })
    }

    pub fn width(&self) -> usize {
        self.sizes[1]
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_scaler(&self) -> &Standardizer {
        &self.input_scaler
    }

    pub fn output_scaler(&self) -> &Standardizer {
        &self.output_scaler
    }

    /// Multiplies every weight and bias by `factor`; standardizers and BN
    /// statistics are untouched.
    pub fn scale_parameters(&mut self, factor: f64) {
        for h in &mut self.hidden {
            h.linear.weights.iter_mut().chain(&mut h.linear.bias).for_each(|w| *w *= factor);
        }
        self.output.weights.iter_mut().chain(&mut self.output.bias).for_each(|w| *w *= factor);
    }

    pub fn set_output_scaler(&mut self, s: Standardizer) {
        self.output_scaler = s;
    }

    pub fn set_input_scaler(&mut self, s: Standardizer) {
        self.input_scaler = s;
    }

    pub fn forward(&self, fhat: &Vec3, fdot_hat: &Vec3) -> Vec3 {
        let x = [fhat.x, fhat.y, fhat.z, fdot_hat.x, fdot_hat.y, fdot_hat.z];
        let y = self.forward_raw(&x);
        Vec3::new(y[0], y[1], y[2])
    }

    pub fn forward_raw(&self, x: &[f64; 6]) -> [f64; 3] {
        let mut z = [0.0; 6];
        self.input_scaler.apply(x, &mut z);
        let mut cur: Vec<f64> = z.to_vec();
        for h in &self.hidden {
            let mut a = vec![0.0; h.linear.rows];
            h.linear.apply(&cur, &mut a);
            for (i, ai) in a.iter_mut().enumerate() {
                let (s, b) = h.bn.folded(i);
                *ai = elu(s * *ai + b);
            }
            cur = a;
        }
        let mut ys = [0.0; 3];
        self.output.apply(&cur, &mut ys);
        let mut y = [0.0; 3];
        self.output_scaler.invert(&ys, &mut y);
        y
    }

    /// `∂N/∂(F̂, F̂̇)` in inference mode.
    pub fn jacobian(&self, fhat: &Vec3, fdot_hat: &Vec3) -> SMatrix<f64, 3, 6> {
        let x = [fhat.x, fhat.y, fhat.z, fdot_hat.x, fdot_hat.y, fdot_hat.z];
        let mut z = [0.0; 6];
        self.input_scaler.apply(&x, &mut z);
        // Running Jacobian of the current activation w.r.t. the raw input.
        let mut jac: Vec<[f64; 6]> = (0..6)
            .map(|i| {
                let mut r = [0.0; 6];
                r[i] = 1.0 / self.input_scaler.std[i];
                r
            })
            .collect();
        let mut cur: Vec<f64> = z.to_vec();
        for h in &self.hidden {
            let l = &h.linear;
            let mut a = vec![0.0; l.rows];
            l.apply(&cur, &mut a);
            let mut next_jac = vec![[0.0; 6]; l.rows];
            for r in 0..l.rows {
                let (s, b) = h.bn.folded(r);
                let pre = s * a[r] + b;
                let g = s * elu_grad(pre);
                a[r] = elu(pre);
                for c in 0..l.cols {
                    let w = l.weights[r * l.cols + c] * g;
                    for k in 0..6 {
                        next_jac[r][k] += w * jac[c][k];
                    }
                }
            }
            cur = a;
            jac = next_jac;
        }
        let l = &self.output;
        let mut out = SMatrix::<f64, 3, 6>::zeros();
        for r in 0..3 {
            for c in 0..l.cols {
                let w = l.weights[r * l.cols + c] * self.output_scaler.std[r];
                for k in 0..6 {
                    out[(r, k)] += w * jac[c][k];
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let net: Mlp = serde_json::from_str(text)?;
        if net.schema != CHECKPOINT_SCHEMA {
            return Err(Error::invalid(format!(
                "checkpoint schema `{}` is not `{CHECKPOINT_SCHEMA}`",
                net.schema
            )));
        }
        let w = net.sizes.get(1).copied().unwrap_or(0);
        let consistent = net.sizes.len() == 4
            && net.sizes[0] == Self::INPUTS
            && net.sizes[3] == Self::OUTPUTS
            && net.sizes[2] == w
            && net.hidden.len() == 2
            && net.hidden.iter().zip(net.sizes.windows(2)).all(|(h, s)| {
                h.linear.rows == s[1] && h.linear.cols == s[0] && h.linear.weights.len() == s[0] * s[1]
            })
            && net.output.weights.len() == 3 * w
            && net.input_scaler.std.len() == 6
            && net.output_scaler.std.len() == 3;
        if !consistent {
            return Err(Error::ShapeMismatch("checkpoint layer sizes are inconsistent".into()));
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
