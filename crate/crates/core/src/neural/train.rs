use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::TrainingSet;
use super::mlp::{elu, elu_grad, Mlp, Standardizer};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 2000,
            batch_size: 64,
            learning_rate: 1e-3,
            patience: 100,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    /// Held-out MSE in standardized output units at the returned state.
    pub best_validation_loss: f64,
    /// `[train, validation]` per epoch.
    pub loss_curve: Vec<[f64; 2]>,
    pub train_samples: usize,
    pub validation_samples: usize,
}

/// Trains a fresh `width`-wide network on `data` and returns the state with
/// the lowest held-out loss.
pub fn train(data: &TrainingSet, width: usize, cfg: &TrainConfig) -> Result<(Mlp, TrainReport)> {
    data.validate()?;
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) || !(0.0..1.0).contains(&cfg.validation_fraction) {
        return Err(Error::invalid("invalid training configuration"));
    }
    let mut net = Mlp::new(width, cfg.seed)?;
    net.input_scaler = Standardizer::fit(data.samples.iter().map(|s| s.input.as_slice()), 6);
    net.output_scaler = Standardizer::fit(data.samples.iter().map(|s| s.target.as_slice()), 3);

    let n = data.len();
    let mut x = vec![0.0; 6 * n];
    let mut t = vec![0.0; 3 * n];
    for (i, s) in data.samples.iter().enumerate() {
        net.input_scaler.apply(&s.input, &mut x[6 * i..6 * i + 6]);
        net.output_scaler.apply(&s.target, &mut t[3 * i..3 * i + 3]);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = if n >= 2 {
        ((n as f64 * cfg.validation_fraction).round() as usize).clamp(usize::from(cfg.validation_fraction > 0.0), n - 1)
    } else {
        0
    };
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    let val_idx: Vec<usize> = if val_idx.is_empty() { train_idx.clone() } else { val_idx.to_vec() };

    let mut adam = Adam::new(&net, cfg.learning_rate);
    let mut ws = Workspace::default();
    let mut best = (f64::INFINITY, net.clone(), 0usize);
    let mut curve = Vec::new();
    let mut since_best = 0;
    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut counted = 0;
        for batch in train_idx.chunks(cfg.batch_size) {
            if batch.len() < 2 && train_idx.len() > 1 {
                continue;
            }
            let loss = ws.step(&mut net, &x, &t, batch);
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged(format!(
                    "non-finite batch loss at epoch {epoch} (batch of {})",
                    batch.len()
                )));
            }
            adam.update(&mut net, &ws.grads);
            epoch_loss += loss * batch.len() as f64;
            counted += batch.len();
        }
        let train_loss = epoch_loss / counted.max(1) as f64;
        let val_loss = inference_loss(&net, &x, &t, &val_idx);
        if !val_loss.is_finite() {
            return Err(Error::TrainingDiverged(format!("non-finite validation loss at epoch {epoch}")));
        }
        curve.push([train_loss, val_loss]);
        if val_loss < best.0 {
            best = (val_loss, net.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    log::debug!(
        "trained width {width}: {} epochs, best val {:.3e} at {}",
        curve.len(),
        best.0,
        best.2
    );
    let report = TrainReport {
        epochs_run: curve.len(),
        best_epoch: best.2,
        best_validation_loss: best.0,
        loss_curve: curve,
        train_samples: train_idx.len(),
        validation_samples: n_val,
    };
    Ok((best.1, report))
}

fn inference_loss(net: &Mlp, x: &[f64], t: &[f64], idx: &[usize]) -> f64 {
    // Standardized-space evaluation with running BN statistics.
    let mut total = 0.0;
    for &i in idx {
        let mut raw = [0.0; 6];
        net.input_scaler.invert(&x[6 * i..6 * i + 6], &mut raw);
        let y = net.forward_raw(&raw);
        let mut ys = [0.0; 3];
        net.output_scaler.apply(&y, &mut ys);
        total += (0..3).map(|k| (ys[k] - t[3 * i + k]).powi(2)).sum::<f64>();
    }
    total / (3 * idx.len().max(1)) as f64
}

/// Gradients in the parameter order of [`param_slices`].
type Grads = Vec<Vec<f64>>;

fn param_slices(net: &mut Mlp) -> Vec<&mut Vec<f64>> {
    let mut out: Vec<&mut Vec<f64>> = Vec::new();
    for h in net.hidden.iter_mut() {
        out.push(&mut h.linear.weights);
        out.push(&mut h.linear.bias);
        out.push(&mut h.bn.gamma);
        out.push(&mut h.bn.beta);
    }
    out.push(&mut net.output.weights);
    out.push(&mut net.output.bias);
    out
}

struct Adam {
    lr: f64,
    m: Grads,
    v: Grads,
    t: i32,
}

impl Adam {
    fn new(net: &Mlp, lr: f64) -> Self {
        let mut tmp = net.clone();
        let shapes: Grads = param_slices(&mut tmp).iter().map(|p| vec![0.0; p.len()]).collect();
        Adam {
            lr,
            m: shapes.clone(),
            v: shapes,
            t: 0,
        }
    }

    fn update(&mut self, net: &mut Mlp, grads: &Grads) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for (k, p) in param_slices(net).into_iter().enumerate() {
            for (i, w) in p.iter_mut().enumerate() {
                let g = grads[k][i];
                let m = &mut self.m[k][i];
                let v = &mut self.v[k][i];
                *m = B1 * *m + (1.0 - B1) * g;
                *v = B2 * *v + (1.0 - B2) * g * g;
                *w -= self.lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
            }
        }
    }
}

#[derive(Default)]
struct Workspace {
    grads: Grads,
}

struct LayerCache {
    input: Vec<f64>,
    xhat: Vec<f64>,
    pre_act: Vec<f64>,
    inv_std: Vec<f64>,
}

const BN_MOMENTUM: f64 = 0.1;

impl Workspace {
    /// One training-mode forward/backward pass; fills `grads`, updates BN
    /// running statistics and returns the batch MSE.
    fn step(&mut self, net: &mut Mlp, x: &[f64], t: &[f64], batch: &[usize]) -> f64 {
        let b = batch.len();
        let bf = b as f64;
        let mut cur: Vec<f64> = batch.iter().flat_map(|&i| x[6 * i..6 * i + 6].iter().copied()).collect();
        let mut caches = Vec::with_capacity(net.hidden.len());
        for h in net.hidden.iter_mut() {
            let (rows, cols) = (h.linear.rows, h.linear.cols);
            let mut a = vec![0.0; b * rows];
            for s in 0..b {
                h.linear.apply(&cur[s * cols..(s + 1) * cols], &mut a[s * rows..(s + 1) * rows]);
            }
            let mut xhat = vec![0.0; b * rows];
            let mut pre = vec![0.0; b * rows];
            let mut inv_std = vec![0.0; rows];
            for r in 0..rows {
                let mean = (0..b).map(|s| a[s * rows + r]).sum::<f64>() / bf;
                let var = (0..b).map(|s| (a[s * rows + r] - mean).powi(2)).sum::<f64>() / bf;
                inv_std[r] = 1.0 / (var + h.bn.eps).sqrt();
                for s in 0..b {
                    let xh = (a[s * rows + r] - mean) * inv_std[r];
                    xhat[s * rows + r] = xh;
                    pre[s * rows + r] = h.bn.gamma[r] * xh + h.bn.beta[r];
                }
                let unbiased = if b > 1 { var * bf / (bf - 1.0) } else { var };
                h.bn.running_mean[r] = (1.0 - BN_MOMENTUM) * h.bn.running_mean[r] + BN_MOMENTUM * mean;
                h.bn.running_var[r] = (1.0 - BN_MOMENTUM) * h.bn.running_var[r] + BN_MOMENTUM * unbiased;
            }
            let out: Vec<f64> = pre.iter().map(|&p| elu(p)).collect();
            caches.push(LayerCache {
                input: std::mem::replace(&mut cur, out),
                xhat,
                pre_act: pre,
                inv_std,
            });
        }
        let o = &net.output;
        let width = o.cols;
        let mut d_out = vec![0.0; b * 3];
        let mut loss = 0.0;
        for (s, &i) in batch.iter().enumerate() {
            let mut y = [0.0; 3];
            o.apply(&cur[s * width..(s + 1) * width], &mut y);
            for k in 0..3 {
                let e = y[k] - t[3 * i + k];
                loss += e * e;
                d_out[s * 3 + k] = 2.0 * e / (3.0 * bf);
            }
        }
        loss /= 3.0 * bf;

        let nl = net.hidden.len();
        let mut grads: Grads = vec![Vec::new(); 4 * nl + 2];
        let (gw, gb, d_prev) = linear_backward(&o.weights, 3, width, &cur, &d_out, b);
        grads[4 * nl] = gw;
        grads[4 * nl + 1] = gb;
        let mut d_cur = d_prev;
        for (li, (h, c)) in net.hidden.iter().zip(&caches).enumerate().rev() {
            let rows = h.linear.rows;
            let mut dgamma = vec![0.0; rows];
            let mut dbeta = vec![0.0; rows];
            let mut da = vec![0.0; b * rows];
            for r in 0..rows {
                let mut sum_dxh = 0.0;
                let mut sum_dxh_xh = 0.0;
                let mut dxh = vec![0.0; b];
                for s in 0..b {
                    let k = s * rows + r;
                    let dy = d_cur[k] * elu_grad(c.pre_act[k]);
                    dgamma[r] += dy * c.xhat[k];
                    dbeta[r] += dy;
                    dxh[s] = dy * h.bn.gamma[r];
                    sum_dxh += dxh[s];
                    sum_dxh_xh += dxh[s] * c.xhat[k];
                }
                for s in 0..b {
                    let k = s * rows + r;
                    da[k] = c.inv_std[r] / bf * (bf * dxh[s] - sum_dxh - c.xhat[k] * sum_dxh_xh);
                }
            }
            let (gw, gb, d_prev) = linear_backward(&h.linear.weights, rows, h.linear.cols, &c.input, &da, b);
            grads[4 * li] = gw;
            grads[4 * li + 1] = gb;
            grads[4 * li + 2] = dgamma;
            grads[4 * li + 3] = dbeta;
            d_cur = d_prev;
        }
        self.grads = grads;
        loss
    }
}

fn linear_backward(w: &[f64], rows: usize, cols: usize, input: &[f64], d_out: &[f64], b: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut gw = vec![0.0; rows * cols];
    let mut gb = vec![0.0; rows];
    let mut d_in = vec![0.0; b * cols];
    for s in 0..b {
        let xin = &input[s * cols..(s + 1) * cols];
        for r in 0..rows {
            let d = d_out[s * rows + r];
            gb[r] += d;
            for c in 0..cols {
                gw[r * cols + c] += d * xin[c];
                d_in[s * cols + c] += d * w[r * cols + c];
            }
        }
    }
    (gw, gb, d_in)
}
