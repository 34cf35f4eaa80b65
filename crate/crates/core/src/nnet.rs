//! Feed-forward μ/σ regression networks with exact reverse-mode gradients.
//!
//! Each network maps the 13-entry cell encoding through ReLU hidden layers
//! to two heads: a bounded mean `μ = tanh_scale · tanh(a)` and a positive
//! spread `σ = softplus(b) + sigma_floor`. Training minimizes the Gaussian
//! negative log-likelihood with Adam under a step-decayed learning rate.
//! Gradients (both parameter- and input-side) are hand-derived and verified
//! against central finite differences in the tests.

use std::path::Path;

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{NetworkInput, NETWORK_INPUTS};
use crate::rng;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Architecture and head constants of one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Hidden-layer widths, input → output order.
    pub hidden: Vec<usize>,
    /// Scale of the tanh mean head.
    pub tanh_scale: f64,
    /// Additive floor under the softplus spread head.
    pub sigma_floor: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256, 256],
            tanh_scale: 2.0,
            sigma_floor: 1e-6,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config(
                "network needs at least one hidden layer of nonzero width".into(),
            ));
        }
        if !(self.tanh_scale > 0.0) {
            return Err(Error::Config(format!(
                "tanh_scale must be positive, got {}",
                self.tanh_scale
            )));
        }
        if !(self.sigma_floor > 0.0) {
            return Err(Error::Config(format!(
                "sigma_floor must be positive, got {}",
                self.sigma_floor
            )));
        }
        Ok(())
    }
}

/// One affine layer: `z = x · wᵀ + b`, weights stored rows = output units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            w: Array2::zeros((out_dim, in_dim)),
            b: Array1::zeros(out_dim),
        }
    }
}

/// All weights of one network plus its head constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
    pub tanh_scale: f64,
    pub sigma_floor: f64,
}

impl MlpParams {
    /// He-style uniform fan-in initialization, deterministic in `seed`.
    pub fn init(cfg: &MlpConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut dims = vec![NETWORK_INPUTS];
        dims.extend_from_slice(&cfg.hidden);
        dims.push(2);
        let mut rng = rng::stream(seed, "mlp-init", 0);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for pair in dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / fan_in as f64).sqrt();
            let w = Array2::from_shape_fn((fan_out, fan_in), |_| rng.gen_range(-limit..limit));
            layers.push(Dense {
                w,
                b: Array1::zeros(fan_out),
            });
        }
        Ok(Self {
            layers,
            tanh_scale: cfg.tanh_scale,
            sigma_floor: cfg.sigma_floor,
        })
    }

    /// Zero-filled buffers with this network's shapes (gradients, Adam moments).
    pub fn zeros_like(&self) -> Vec<Dense> {
        self.layers
            .iter()
            .map(|l| Dense::zeros(l.w.nrows(), l.w.ncols()))
            .collect()
    }

    /// Total scalar parameter count.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Read one parameter by flat index (weights row-major, then biases, per layer).
    pub fn param(&self, mut k: usize) -> f64 {
        for l in &self.layers {
            if k < l.w.len() {
                return *l.w.as_slice().expect("contiguous").get(k).unwrap();
            }
            k -= l.w.len();
            if k < l.b.len() {
                return l.b[k];
            }
            k -= l.b.len();
        }
        panic!("parameter index out of range");
    }

    /// Mutate one parameter by flat index; same ordering as [`Self::param`].
    pub fn param_mut(&mut self, mut k: usize) -> &mut f64 {
        for l in &mut self.layers {
            if k < l.w.len() {
                return l.w.as_slice_mut().expect("contiguous").get_mut(k).unwrap();
            }
            k -= l.w.len();
            if k < l.b.len() {
                return &mut l.b[k];
            }
            k -= l.b.len();
        }
        panic!("parameter index out of range");
    }
}

/// A single mean/spread prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemberPrediction {
    pub mu: f64,
    pub sigma: f64,
}

fn softplus(x: f64) -> f64 {
    // max(x,0) + ln(1+e^{-|x|}) avoids overflow on both tails.
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Intermediate state of one batched forward pass.
pub struct ForwardCache {
    /// Layer inputs: `h[0]` is the batch, `h[l]` the ReLU output feeding layer `l`.
    h: Vec<Array2<f64>>,
    /// Final pre-activations, columns (a, b).
    z_out: Array2<f64>,
    pub mu: Array1<f64>,
    pub sigma: Array1<f64>,
}

/// Batched forward pass; rows of `x` are independent samples.
pub fn forward_batch(params: &MlpParams, x: &Array2<f64>) -> ForwardCache {
    let n_layers = params.layers.len();
    let mut h = Vec::with_capacity(n_layers);
    h.push(x.clone());
    for l in &params.layers[..n_layers - 1] {
        let mut z = h.last().unwrap().dot(&l.w.t());
        z += &l.b;
        z.mapv_inplace(|v| v.max(0.0));
        h.push(z);
    }
    let last = &params.layers[n_layers - 1];
    let mut z_out = h.last().unwrap().dot(&last.w.t());
    z_out += &last.b;
    let mu = z_out.column(0).mapv(|a| params.tanh_scale * a.tanh());
    let sigma = z_out.column(1).mapv(|b| softplus(b) + params.sigma_floor);
    ForwardCache { h, z_out, mu, sigma }
}

/// Single-sample prediction.
pub fn forward(params: &MlpParams, x: &NetworkInput) -> Result<MemberPrediction> {
    if x.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite network input".into()));
    }
    let xm = Array2::from_shape_vec((1, NETWORK_INPUTS), x.0.to_vec()).expect("shape");
    let cache = forward_batch(params, &xm);
    Ok(MemberPrediction {
        mu: cache.mu[0],
        sigma: cache.sigma[0],
    })
}

/// Gaussian negative log-likelihood of one prediction: `log σ + (y−μ)²/(2σ²)`.
pub fn nll(pred: MemberPrediction, y: f64) -> f64 {
    let r = y - pred.mu;
    pred.sigma.ln() + r * r / (2.0 * pred.sigma * pred.sigma)
}

/// Mean NLL over a batch already passed through [`forward_batch`].
pub fn nll_batch(cache: &ForwardCache, y: &Array1<f64>) -> f64 {
    let n = y.len() as f64;
    Zip::from(&cache.mu)
        .and(&cache.sigma)
        .and(y)
        .fold(0.0, |acc, &mu, &sigma, &yi| {
            acc + nll(MemberPrediction { mu, sigma }, yi)
        })
        / n
}

/// Gradient of the mean batch NLL with respect to every parameter.
pub fn backward_batch(
    params: &MlpParams,
    cache: &ForwardCache,
    y: &Array1<f64>,
) -> Vec<Dense> {
    let n = y.len() as f64;
    let s = params.tanh_scale;
    // Head-side chain: dL/da and dL/db per sample.
    let mut dz = Array2::zeros(cache.z_out.raw_dim());
    for i in 0..y.len() {
        let mu = cache.mu[i];
        let sigma = cache.sigma[i];
        let r = mu - y[i];
        let dmu = r / (sigma * sigma) / n;
        let dsigma = (1.0 / sigma - r * r / (sigma * sigma * sigma)) / n;
        let t = mu / s; // tanh(a)
        dz[[i, 0]] = dmu * s * (1.0 - t * t);
        dz[[i, 1]] = dsigma * sigmoid(cache.z_out[[i, 1]]);
    }
    backprop_from(params, cache, dz).0
}

/// Backpropagate `dz` (gradient at the final pre-activations) through the
/// stack; returns parameter gradients and the gradient at the input.
fn backprop_from(
    params: &MlpParams,
    cache: &ForwardCache,
    mut dz: Array2<f64>,
) -> (Vec<Dense>, Array2<f64>) {
    let mut grads = params.zeros_like();
    for (l, layer) in params.layers.iter().enumerate().rev() {
        grads[l].w = dz.t().dot(&cache.h[l]);
        grads[l].b = dz.sum_axis(Axis(0));
        let mut dh = dz.dot(&layer.w);
        if l > 0 {
            // ReLU mask: h[l] holds the rectified outputs of layer l − 1.
            Zip::from(&mut dh).and(&cache.h[l]).for_each(|g, &h| {
                if h <= 0.0 {
                    *g = 0.0;
                }
            });
        }
        dz = dh;
    }
    let dx = dz;
    (grads, dx)
}

/// Gradient of one sample's NLL with respect to every parameter.
pub fn backward(params: &MlpParams, x: &NetworkInput, y: f64) -> Result<Vec<Dense>> {
    if x.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite network input".into()));
    }
    let xm = Array2::from_shape_vec((1, NETWORK_INPUTS), x.0.to_vec()).expect("shape");
    let cache = forward_batch(params, &xm);
    let yv = Array1::from_elem(1, y);
    Ok(backward_batch(params, &cache, &yv))
}

/// `∂μ/∂x` and `∂σ/∂x` at one input.
pub fn input_gradient(
    params: &MlpParams,
    x: &NetworkInput,
) -> Result<([f64; NETWORK_INPUTS], [f64; NETWORK_INPUTS])> {
    if x.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite network input".into()));
    }
    let xm = Array2::from_shape_vec((1, NETWORK_INPUTS), x.0.to_vec()).expect("shape");
    let cache = forward_batch(params, &xm);
    let s = params.tanh_scale;
    let t = cache.mu[0] / s;

    let mut seed_mu = Array2::zeros((1, 2));
    seed_mu[[0, 0]] = s * (1.0 - t * t);
    let (_, dx_mu) = backprop_from(params, &cache, seed_mu);

    let mut seed_sigma = Array2::zeros((1, 2));
    seed_sigma[[0, 1]] = sigmoid(cache.z_out[[0, 1]]);
    let (_, dx_sigma) = backprop_from(params, &cache, seed_sigma);

    let mut dmu = [0.0; NETWORK_INPUTS];
    let mut dsigma = [0.0; NETWORK_INPUTS];
    for i in 0..NETWORK_INPUTS {
        dmu[i] = dx_mu[[0, i]];
        dsigma[i] = dx_sigma[[0, i]];
    }
    Ok((dmu, dsigma))
}

/// Adam moment accumulators.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<Dense>,
    v: Vec<Dense>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &MlpParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One Adam update in place; `β1 = 0.9`, `β2 = 0.999`, `ε = 1e−8`.
pub fn adam_step(params: &mut MlpParams, grads: &[Dense], state: &mut AdamState, lr: f64) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for (l, grad) in grads.iter().enumerate() {
        let update = |theta: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *theta -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        };
        Zip::from(&mut params.layers[l].w)
            .and(&grad.w)
            .and(&mut state.m[l].w)
            .and(&mut state.v[l].w)
            .for_each(|t, &g, m, v| update(t, g, m, v));
        Zip::from(&mut params.layers[l].b)
            .and(&grad.b)
            .and(&mut state.m[l].b)
            .and(&mut state.v[l].b)
            .for_each(|t, &g, m, v| update(t, g, m, v));
    }
}

/// Optimizer schedule and shuffling seed for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub decay: f64,
    /// First epoch (0-indexed) trained at a decayed rate.
    pub decay_start_epoch: usize,
    pub seed: u64,
    pub sigma_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 128,
            lr0: 1e-3,
            decay: 0.99,
            decay_start_epoch: 10,
            seed: 0,
            sigma_floor: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!(
                "decay must lie in (0, 1], got {}",
                self.decay
            )));
        }
        if !(self.lr0 > 0.0) {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        Ok(())
    }
}

/// Step-decayed rate: full `lr0` before `decay_start_epoch`, then one extra
/// factor of `decay` per epoch starting there.
pub fn learning_rate(cfg: &TrainConfig, epoch: usize) -> f64 {
    let steps = (epoch as i64 - cfg.decay_start_epoch as i64 + 1).max(0);
    cfg.lr0 * cfg.decay.powi(steps as i32)
}

/// Result of one training run.
pub struct TrainReport {
    pub params: MlpParams,
    /// Mean training NLL per epoch.
    pub epoch_nll: Vec<f64>,
}

/// Mini-batch Adam over a seeded per-epoch shuffle.
///
/// Rows are first sorted into a canonical content order, so training is
/// invariant to the order the dataset arrived in: the shuffle permutes
/// indices into that canonical order, never the caller's order.
pub fn train(
    params0: MlpParams,
    data: &[(NetworkInput, f64)],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| {
        let (xa, ya) = &data[a];
        let (xb, yb) = &data[b];
        xa.0.iter()
            .zip(xb.0.iter())
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| o.is_ne())
            .unwrap_or_else(|| ya.total_cmp(yb))
    });
    let n = data.len();
    let mut x_all = Array2::zeros((n, NETWORK_INPUTS));
    let mut y_all = Array1::zeros(n);
    for (row, &src) in order.iter().enumerate() {
        let (x, y) = &data[src];
        for (col, &v) in x.0.iter().enumerate() {
            x_all[[row, col]] = v;
        }
        y_all[row] = *y;
    }

    let mut params = params0;
    params.sigma_floor = cfg.sigma_floor;
    let mut adam = AdamState::new(&params);
    let mut epoch_nll = Vec::with_capacity(cfg.epochs);
    let mut idx: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        let lr = learning_rate(cfg, epoch);
        let mut shuffle_rng = rng::stream(cfg.seed, "epoch-shuffle", epoch as u64);
        // Fisher–Yates over canonical indices.
        for i in (1..n).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            idx.swap(i, j);
        }
        let mut loss_sum = 0.0;
        for chunk in idx.chunks(cfg.batch_size) {
            let xb = x_all.select(Axis(0), chunk);
            let yb = y_all.select(Axis(0), chunk);
            let cache = forward_batch(&params, &xb);
            loss_sum += nll_batch(&cache, &yb) * chunk.len() as f64;
            let grads = backward_batch(&params, &cache, &yb);
            adam_step(&mut params, &grads, &mut adam, lr);
        }
        epoch_nll.push(loss_sum / n as f64);
    }
    Ok(TrainReport { params, epoch_nll })
}

/// On-disk network checkpoint: weights plus the training config that made them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub params: MlpParams,
    pub train_config: TrainConfig,
}

pub fn save_checkpoint(path: &Path, ckpt: &MlpCheckpoint) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(file, ckpt)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<MlpCheckpoint> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    Ok(serde_json::from_reader(file)?)
}
