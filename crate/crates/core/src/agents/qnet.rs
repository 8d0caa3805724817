//! Action-value network: three stride-2 3D convolutions, each followed by
//! batch normalisation and a rectifier, then a fully-connected head with one
//! output per angle bin plus STOP.
//!
//! All parameters live in one flat `Vec<f64>` so the optimiser, the weight
//! file and the finite-difference checks can treat them uniformly. Batch-norm
//! running statistics are kept separately and are not trainable.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::StateTensor;
use crate::raw;

pub const INPUT_CHANNELS: usize = 2;
pub const CONV_CHANNELS: [usize; 3] = [8, 16, 32];
const KERNEL: usize = 3;
const KERNEL_VOLUME: usize = KERNEL * KERNEL * KERNEL;
const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Error)]
pub enum QNetError {
    #[error("input dims {found:?} do not match network dims {expected:?}")]
    DimMismatch { expected: [usize; 3], found: [usize; 3] },
    #[error("batch is empty or inconsistent: {0}")]
    BadBatch(String),
    #[error("weight file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = QNetError> = std::result::Result<T, E>;

/// Output size of a kernel-3, stride-2, padding-1 convolution.
pub fn conv_out(n: usize) -> usize {
    (n - 1) / 2 + 1
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ConvShape {
    in_c: usize,
    out_c: usize,
    in_d: [usize; 3],
    out_d: [usize; 3],
}

impl ConvShape {
    fn in_spatial(&self) -> usize {
        self.in_d[0] * self.in_d[1] * self.in_d[2]
    }
    fn out_spatial(&self) -> usize {
        self.out_d[0] * self.out_d[1] * self.out_d[2]
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    conv_w: [usize; 3],
    gamma: [usize; 3],
    beta: [usize; 3],
    fc_w: usize,
    fc_b: usize,
    total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    input_dims: [usize; 3],
    n_actions: usize,
    shapes: [ConvShape; 3],
    flat: usize,
    layout: Layout,
    params: Vec<f64>,
    /// Per layer: running mean then running variance, `out_c` each.
    running: Vec<f64>,
}

/// Per-sample tensors: `[channel][z][y][x]`.
fn conv_forward(s: &ConvShape, input: &[f64], w: &[f64]) -> Vec<f64> {
    let [ix, iy, iz] = s.in_d;
    let [ox, oy, oz] = s.out_d;
    let in_sp = s.in_spatial();
    let mut out = vec![0.0; s.out_c * s.out_spatial()];
    for oc in 0..s.out_c {
        let out_c = &mut out[oc * ox * oy * oz..(oc + 1) * ox * oy * oz];
        for ic in 0..s.in_c {
            let plane = &input[ic * in_sp..(ic + 1) * in_sp];
            let kw = &w[(oc * s.in_c + ic) * KERNEL_VOLUME..(oc * s.in_c + ic + 1) * KERNEL_VOLUME];
            for z in 0..oz {
                for kz in 0..KERNEL {
                    let zz = (2 * z + kz) as isize - 1;
                    if zz < 0 || zz >= iz as isize {
                        continue;
                    }
                    for y in 0..oy {
                        for ky in 0..KERNEL {
                            let yy = (2 * y + ky) as isize - 1;
                            if yy < 0 || yy >= iy as isize {
                                continue;
                            }
                            let row = (zz as usize * iy + yy as usize) * ix;
                            let orow = (z * oy + y) * ox;
                            let kbase = (kz * KERNEL + ky) * KERNEL;
                            for x in 0..ox {
                                let mut acc = 0.0;
                                for kx in 0..KERNEL {
                                    let xx = (2 * x + kx) as isize - 1;
                                    if xx >= 0 && xx < ix as isize {
                                        acc += kw[kbase + kx] * plane[row + xx as usize];
                                    }
                                }
                                out_c[orow + x] += acc;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates the weight gradient into `dw` and returns the input gradient.
fn conv_backward(s: &ConvShape, input: &[f64], w: &[f64], dout: &[f64], dw: &mut [f64], need_din: bool) -> Vec<f64> {
    let [ix, iy, iz] = s.in_d;
    let [ox, oy, oz] = s.out_d;
    let in_sp = s.in_spatial();
    let out_sp = s.out_spatial();
    let mut din = if need_din { vec![0.0; s.in_c * in_sp] } else { Vec::new() };
    for oc in 0..s.out_c {
        let g = &dout[oc * out_sp..(oc + 1) * out_sp];
        for ic in 0..s.in_c {
            let plane = &input[ic * in_sp..(ic + 1) * in_sp];
            let wbase = (oc * s.in_c + ic) * KERNEL_VOLUME;
            for z in 0..oz {
                for kz in 0..KERNEL {
                    let zz = (2 * z + kz) as isize - 1;
                    if zz < 0 || zz >= iz as isize {
                        continue;
                    }
                    for y in 0..oy {
                        for ky in 0..KERNEL {
                            let yy = (2 * y + ky) as isize - 1;
                            if yy < 0 || yy >= iy as isize {
                                continue;
                            }
                            let row = (zz as usize * iy + yy as usize) * ix;
                            let orow = (z * oy + y) * ox;
                            let kbase = wbase + (kz * KERNEL + ky) * KERNEL;
                            for x in 0..ox {
                                let go = g[orow + x];
                                if go == 0.0 {
                                    continue;
                                }
                                for kx in 0..KERNEL {
                                    let xx = (2 * x + kx) as isize - 1;
                                    if xx >= 0 && xx < ix as isize {
                                        let src = row + xx as usize;
                                        dw[kbase + kx] += go * plane[src];
                                        if need_din {
                                            din[ic * in_sp + src] += go * w[kbase + kx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    din
}

/// Batch statistics of one normalisation layer.
#[derive(Debug, Clone)]
struct BnBatch {
    mean: Vec<f64>,
    var: Vec<f64>,
    count: usize,
}

/// Normalises `x` (one tensor per sample) with batch statistics over the
/// batch and spatial axes. Returns `x̂` per sample and the statistics.
pub fn batchnorm_normalize(batch: &[Vec<f64>], channels: usize) -> Vec<Vec<f64>> {
    bn_train_normalize(batch, channels).0
}

fn bn_train_normalize(batch: &[Vec<f64>], channels: usize) -> (Vec<Vec<f64>>, BnBatch) {
    let sp = batch[0].len() / channels;
    let count = batch.len() * sp;
    let mut mean = vec![0.0; channels];
    let mut var = vec![0.0; channels];
    for c in 0..channels {
        let mut s = 0.0;
        for x in batch {
            s += x[c * sp..(c + 1) * sp].iter().sum::<f64>();
        }
        mean[c] = s / count as f64;
        let mut v = 0.0;
        for x in batch {
            v += x[c * sp..(c + 1) * sp].iter().map(|&t| (t - mean[c]).powi(2)).sum::<f64>();
        }
        var[c] = v / count as f64;
    }
    let xhat = batch
        .iter()
        .map(|x| {
            let mut out = x.clone();
            for c in 0..channels {
                let inv = 1.0 / (var[c] + BN_EPS).sqrt();
                for t in &mut out[c * sp..(c + 1) * sp] {
                    *t = (*t - mean[c]) * inv;
                }
            }
            out
        })
        .collect();
    (xhat, BnBatch { mean, var, count })
}

struct LayerCache {
    input: Vec<Vec<f64>>,
    xhat: Vec<Vec<f64>>,
    /// Post-activation outputs; zero entries mark inactive rectifier units.
    output: Vec<Vec<f64>>,
    stats: BnBatch,
}

/// Activations kept from a training-mode forward pass.
pub struct ForwardCache {
    layers: Vec<LayerCache>,
    flat: Vec<Vec<f64>>,
}

impl QNetwork {
    pub fn new(input_dims: [usize; 3], n_actions: usize, seed: u64) -> Result<Self> {
        if input_dims.contains(&0) || n_actions == 0 {
            return Err(QNetError::BadBatch(format!(
                "input dims {input_dims:?} and action count {n_actions} must be positive"
            )));
        }
        let mut shapes = [ConvShape {
            in_c: 0,
            out_c: 0,
            in_d: [0; 3],
            out_d: [0; 3],
        }; 3];
        let mut d = input_dims;
        let mut c = INPUT_CHANNELS;
        for (l, &oc) in CONV_CHANNELS.iter().enumerate() {
            let od = d.map(conv_out);
            shapes[l] = ConvShape {
                in_c: c,
                out_c: oc,
                in_d: d,
                out_d: od,
            };
            d = od;
            c = oc;
        }
        let flat = c * d[0] * d[1] * d[2];

        let mut off = 0;
        let mut conv_w = [0; 3];
        let mut gamma = [0; 3];
        let mut beta = [0; 3];
        for l in 0..3 {
            conv_w[l] = off;
            off += shapes[l].out_c * shapes[l].in_c * KERNEL_VOLUME;
            gamma[l] = off;
            off += shapes[l].out_c;
            beta[l] = off;
            off += shapes[l].out_c;
        }
        let fc_w = off;
        off += n_actions * flat;
        let fc_b = off;
        off += n_actions;
        let layout = Layout {
            conv_w,
            gamma,
            beta,
            fc_w,
            fc_b,
            total: off,
        };

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; off];
        for l in 0..3 {
            let fan_in = (shapes[l].in_c * KERNEL_VOLUME) as f64;
            let bound = (6.0 / fan_in).sqrt();
            let n = shapes[l].out_c * shapes[l].in_c * KERNEL_VOLUME;
            for p in &mut params[conv_w[l]..conv_w[l] + n] {
                *p = rng.gen_range(-bound..bound);
            }
            params[gamma[l]..gamma[l] + shapes[l].out_c].fill(1.0);
        }
        let bound = 1.0 / (flat as f64).sqrt();
        for p in &mut params[fc_w..fc_w + n_actions * flat] {
            *p = rng.gen_range(-bound..bound);
        }

        let mut running = Vec::new();
        for s in &shapes {
            running.extend(std::iter::repeat_n(0.0, s.out_c));
            running.extend(std::iter::repeat_n(1.0, s.out_c));
        }
        Ok(Self {
            input_dims,
            n_actions,
            shapes,
            flat,
            layout,
            params,
            running,
        })
    }

    pub fn input_dims(&self) -> [usize; 3] {
        self.input_dims
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    pub fn running_stats(&self) -> &[f64] {
        &self.running
    }

    /// Zeroes the fully-connected head, weights and bias.
    pub fn zero_head(&mut self) {
        let (a, b) = (self.layout.fc_w, self.layout.total);
        self.params[a..b].fill(0.0);
    }

    fn running_offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for s in &self.shapes[..l] {
            off += 2 * s.out_c;
        }
        (off, off + self.shapes[l].out_c)
    }

    fn check_input(&self, x: &StateTensor) -> Result<Vec<f64>> {
        if x.dims != self.input_dims {
            return Err(QNetError::DimMismatch {
                expected: self.input_dims,
                found: x.dims,
            });
        }
        Ok(x.data.iter().map(|&v| f64::from(v)).collect())
    }

    fn head(&self, flat: &[f64]) -> Vec<f64> {
        let w = &self.params[self.layout.fc_w..self.layout.fc_b];
        let b = &self.params[self.layout.fc_b..self.layout.total];
        (0..self.n_actions)
            .map(|a| {
                let row = &w[a * self.flat..(a + 1) * self.flat];
                b[a] + row.iter().zip(flat).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect()
    }

    /// Inference-mode action values; batch norm uses the running statistics.
    pub fn forward(&self, x: &StateTensor) -> Result<Vec<f64>> {
        let mut h = self.check_input(x)?;
        for (l, s) in self.shapes.iter().enumerate() {
            let w = &self.params[self.layout.conv_w[l]..self.layout.gamma[l]];
            let mut y = conv_forward(s, &h, w);
            let (rm, rv) = self.running_offsets(l);
            let sp = s.out_spatial();
            for c in 0..s.out_c {
                let g = self.params[self.layout.gamma[l] + c];
                let b = self.params[self.layout.beta[l] + c];
                let mean = self.running[rm + c];
                let inv = 1.0 / (self.running[rv + c] + BN_EPS).sqrt();
                for t in &mut y[c * sp..(c + 1) * sp] {
                    *t = (g * (*t - mean) * inv + b).max(0.0);
                }
            }
            h = y;
        }
        Ok(self.head(&h))
    }

    /// Training-mode forward pass over a batch; batch norm uses batch
    /// statistics. Does not touch the running statistics.
    pub fn forward_train(&self, batch: &[&StateTensor]) -> Result<(Vec<Vec<f64>>, ForwardCache)> {
        if batch.is_empty() {
            return Err(QNetError::BadBatch("empty batch".into()));
        }
        let mut h: Vec<Vec<f64>> = batch.iter().map(|x| self.check_input(x)).collect::<Result<_>>()?;
        let mut layers = Vec::with_capacity(3);
        for (l, s) in self.shapes.iter().enumerate() {
            let w = &self.params[self.layout.conv_w[l]..self.layout.gamma[l]];
            let pre: Vec<Vec<f64>> = h.iter().map(|x| conv_forward(s, x, w)).collect();
            let (xhat, stats) = bn_train_normalize(&pre, s.out_c);
            let sp = s.out_spatial();
            let output: Vec<Vec<f64>> = xhat
                .iter()
                .map(|xh| {
                    let mut o = xh.clone();
                    for c in 0..s.out_c {
                        let g = self.params[self.layout.gamma[l] + c];
                        let b = self.params[self.layout.beta[l] + c];
                        for t in &mut o[c * sp..(c + 1) * sp] {
                            *t = (g * *t + b).max(0.0);
                        }
                    }
                    o
                })
                .collect();
            layers.push(LayerCache {
                input: h,
                xhat,
                output: output.clone(),
                stats,
            });
            h = output;
        }
        let q = h.iter().map(|f| self.head(f)).collect();
        Ok((q, ForwardCache { layers, flat: h }))
    }

    /// Parameter gradient given `dL/dQ` for every sample of the cached batch.
    pub fn backward(&self, cache: &ForwardCache, dq: &[Vec<f64>]) -> Vec<f64> {
        let mut grad = vec![0.0; self.layout.total];
        let bsz = dq.len();
        let (fw, fb) = (self.layout.fc_w, self.layout.fc_b);

        // Fully-connected head.
        let mut dh: Vec<Vec<f64>> = Vec::with_capacity(bsz);
        for (b, g) in dq.iter().enumerate() {
            let flat = &cache.flat[b];
            let mut dflat = vec![0.0; self.flat];
            for a in 0..self.n_actions {
                let ga = g[a];
                if ga == 0.0 {
                    continue;
                }
                grad[fb + a] += ga;
                let row = fw + a * self.flat;
                for f in 0..self.flat {
                    grad[row + f] += ga * flat[f];
                    dflat[f] += ga * self.params[row + f];
                }
            }
            dh.push(dflat);
        }

        for l in (0..3).rev() {
            let s = &self.shapes[l];
            let lc = &cache.layers[l];
            let sp = s.out_spatial();
            let n = lc.stats.count as f64;
            // Rectifier, affine and batch-norm backward.
            let mut dpre: Vec<Vec<f64>> = vec![vec![0.0; s.out_c * sp]; bsz];
            for c in 0..s.out_c {
                let gamma = self.params[self.layout.gamma[l] + c];
                let inv = 1.0 / (lc.stats.var[c] + BN_EPS).sqrt();
                let mut dgamma = 0.0;
                let mut dbeta = 0.0;
                let mut sum_dxh = 0.0;
                let mut sum_dxh_xh = 0.0;
                let mut dxhat: Vec<Vec<f64>> = Vec::with_capacity(bsz);
                for b in 0..bsz {
                    let range = c * sp..(c + 1) * sp;
                    let mut dx = Vec::with_capacity(sp);
                    for ((&d, &o), &xh) in dh[b][range.clone()].iter().zip(&lc.output[b][range.clone()]).zip(&lc.xhat[b][range])
                    {
                        let dy = if o > 0.0 { d } else { 0.0 };
                        dgamma += dy * xh;
                        dbeta += dy;
                        let dxh = dy * gamma;
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh;
                        dx.push(dxh);
                    }
                    dxhat.push(dx);
                }
                grad[self.layout.gamma[l] + c] += dgamma;
                grad[self.layout.beta[l] + c] += dbeta;
                for b in 0..bsz {
                    let xh = &lc.xhat[b][c * sp..(c + 1) * sp];
                    let out = &mut dpre[b][c * sp..(c + 1) * sp];
                    for t in 0..sp {
                        out[t] = inv / n * (n * dxhat[b][t] - sum_dxh - xh[t] * sum_dxh_xh);
                    }
                }
            }
            let w0 = self.layout.conv_w[l];
            let w1 = self.layout.gamma[l];
            let w = &self.params[w0..w1];
            let need_din = l > 0;
            let mut next = Vec::with_capacity(bsz);
            for b in 0..bsz {
                let din = conv_backward(s, &lc.input[b], w, &dpre[b], &mut grad[w0..w1], need_din);
                next.push(din);
            }
            dh = next;
        }
        grad
    }

    /// Mean squared TD error over the batch (training-mode forward pass).
    pub fn loss(&self, batch: &[&StateTensor], actions: &[usize], targets: &[f64]) -> Result<f64> {
        let (q, _) = self.forward_train(batch)?;
        let bsz = batch.len() as f64;
        Ok(q.iter()
            .zip(actions)
            .zip(targets)
            .map(|((qv, &a), &y)| (qv[a] - y).powi(2) / bsz)
            .sum())
    }

    /// Mean squared TD error over the batch and its parameter gradient.
    /// Only the taken action's output enters the loss.
    pub fn loss_and_gradient(
        &self,
        batch: &[&StateTensor],
        actions: &[usize],
        targets: &[f64],
    ) -> Result<(f64, Vec<f64>, ForwardCache)> {
        if batch.len() != actions.len() || batch.len() != targets.len() {
            return Err(QNetError::BadBatch("batch, actions and targets differ in length".into()));
        }
        if let Some(&a) = actions.iter().find(|&&a| a >= self.n_actions) {
            return Err(QNetError::BadBatch(format!("action {a} out of range")));
        }
        let (q, cache) = self.forward_train(batch)?;
        let bsz = batch.len() as f64;
        let mut loss = 0.0;
        let dq: Vec<Vec<f64>> = q
            .iter()
            .zip(actions)
            .zip(targets)
            .map(|((qv, &a), &y)| {
                let err = qv[a] - y;
                loss += err * err / bsz;
                let mut g = vec![0.0; self.n_actions];
                g[a] = 2.0 * err / bsz;
                g
            })
            .collect();
        let grad = self.backward(&cache, &dq);
        Ok((loss, grad, cache))
    }

    /// One optimiser step on the squared TD error; also advances the
    /// batch-norm running statistics. Returns the pre-step loss.
    pub fn train_step(
        &mut self,
        opt: &mut Adam,
        batch: &[&StateTensor],
        actions: &[usize],
        targets: &[f64],
    ) -> Result<f64> {
        let (loss, grad, cache) = self.loss_and_gradient(batch, actions, targets)?;
        for l in 0..3 {
            let (rm, rv) = self.running_offsets(l);
            let st = &cache.layers[l].stats;
            let unbias = if st.count > 1 {
                st.count as f64 / (st.count - 1) as f64
            } else {
                1.0
            };
            for c in 0..self.shapes[l].out_c {
                self.running[rm + c] = (1.0 - BN_MOMENTUM) * self.running[rm + c] + BN_MOMENTUM * st.mean[c];
                self.running[rv + c] = (1.0 - BN_MOMENTUM) * self.running[rv + c] + BN_MOMENTUM * st.var[c] * unbias;
            }
        }
        opt.step(&mut self.params, &grad);
        Ok(loss)
    }

    /// Copies parameters and running statistics from `other`.
    pub fn copy_from(&mut self, other: &QNetwork) {
        self.params.copy_from_slice(&other.params);
        self.running.copy_from_slice(&other.running);
    }

    /// Saves `manifest.json` plus `weights.f32` (parameters, then running
    /// statistics, little-endian float32).
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut tensors = Vec::new();
        for l in 0..3 {
            let s = &self.shapes[l];
            tensors.push(TensorEntry::new(format!("conv{l}.weight"), vec![s.out_c, s.in_c, 3, 3, 3], self.layout.conv_w[l]));
            tensors.push(TensorEntry::new(format!("bn{l}.gamma"), vec![s.out_c], self.layout.gamma[l]));
            tensors.push(TensorEntry::new(format!("bn{l}.beta"), vec![s.out_c], self.layout.beta[l]));
        }
        tensors.push(TensorEntry::new("fc.weight".into(), vec![self.n_actions, self.flat], self.layout.fc_w));
        tensors.push(TensorEntry::new("fc.bias".into(), vec![self.n_actions], self.layout.fc_b));
        let mut off = self.layout.total;
        for l in 0..3 {
            let c = self.shapes[l].out_c;
            tensors.push(TensorEntry::new(format!("bn{l}.running_mean"), vec![c], off));
            tensors.push(TensorEntry::new(format!("bn{l}.running_var"), vec![c], off + c));
            off += 2 * c;
        }
        let manifest = WeightsManifest {
            format_version: 1,
            input_dims: self.input_dims,
            n_actions: self.n_actions,
            weights_file: "weights.f32".into(),
            tensors,
        };
        raw::write_f32_le(
            &dir.join(&manifest.weights_file),
            self.params.iter().chain(&self.running).map(|&v| v as f32),
        )?;
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| QNetError::Format(e.to_string()))?;
        std::fs::write(dir.join("manifest.json"), text + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join("manifest.json"))?;
        let m: WeightsManifest = serde_json::from_str(&text).map_err(|e| QNetError::Format(e.to_string()))?;
        if m.format_version != 1 {
            return Err(QNetError::Format(format!("unsupported version {}", m.format_version)));
        }
        let mut net = QNetwork::new(m.input_dims, m.n_actions, 0)?;
        let values = raw::read_f32_le(&dir.join(&m.weights_file))?
            .map_err(|n| QNetError::Format(format!("payload of {n} bytes")))?;
        let expected = net.params.len() + net.running.len();
        if values.len() != expected {
            return Err(QNetError::Format(format!("expected {expected} values, found {}", values.len())));
        }
        let (p, r) = values.split_at(net.params.len());
        net.params.iter_mut().zip(p).for_each(|(d, &s)| *d = f64::from(s));
        net.running.iter_mut().zip(r).for_each(|(d, &s)| *d = f64::from(s));
        Ok(net)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

impl TensorEntry {
    fn new(name: String, shape: Vec<usize>, offset: usize) -> Self {
        Self { name, shape, offset }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsManifest {
    format_version: u32,
    input_dims: [usize; 3],
    n_actions: usize,
    weights_file: String,
    tensors: Vec<TensorEntry>,
}

/// Adam with the usual bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            params[i] -= self.learning_rate * mh / (vh.sqrt() + self.eps);
        }
    }
}
