//! Deep-ensemble surrogate of the complex transmission coefficient.
//!
//! Two independent ensembles of J networks each model the real and imaginary
//! parts of t on a shared input encoding. Member predictions are pooled into
//! a mixture mean and variance; the summed per-part variance is the
//! acquisition score used to pick new training points. Also here: the
//! fractional-error metric used throughout, and a finite-difference Hessian
//! probe of the pooled mean for effective-dimensionality diagnostics.

use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{
    encode_input, normalize, FrequencyId, NetworkInput, ParamVector, UnitCellSpec,
    NETWORK_INPUTS, NETWORK_WIDTHS,
};
use crate::nnet::{
    forward, forward_batch, input_gradient, train, MemberPrediction, MlpConfig, MlpParams,
    TrainConfig,
};
use crate::rng;

/// Ensemble shape, member seeds, and the per-member training recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    /// Members per output part (J).
    pub members_per_part: usize,
    /// 2J seeds: first J for the real-part members, last J for imaginary.
    pub member_seeds: Vec<u64>,
    pub mlp: MlpConfig,
    pub train: TrainConfig,
}

impl EnsembleConfig {
    /// Derive all member seeds from one master seed.
    pub fn from_master(
        members_per_part: usize,
        mlp: MlpConfig,
        train: TrainConfig,
        master_seed: u64,
    ) -> Self {
        let member_seeds = (0..2 * members_per_part as u64)
            .map(|j| rng::derive_seed(master_seed, "ensemble-member", j))
            .collect();
        Self {
            members_per_part,
            member_seeds,
            mlp,
            train,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.members_per_part < 2 {
            return Err(Error::Config(
                "ensembles need at least 2 members per part".into(),
            ));
        }
        if self.member_seeds.len() != 2 * self.members_per_part {
            return Err(Error::Config(format!(
                "expected {} member seeds, got {}",
                2 * self.members_per_part,
                self.member_seeds.len()
            )));
        }
        self.mlp.validate()?;
        self.train.validate()
    }
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self::from_master(5, MlpConfig::default(), TrainConfig::default(), 0)
    }
}

/// Pooled mean and variance per output part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogatePrediction {
    pub mu_re: f64,
    pub mu_im: f64,
    pub var_re: f64,
    pub var_im: f64,
}

impl SurrogatePrediction {
    pub fn mean(&self) -> Complex64 {
        Complex64::new(self.mu_re, self.mu_im)
    }

    /// Pooled standard deviations as a complex pair (re + i·im).
    pub fn sigma(&self) -> Complex64 {
        Complex64::new(self.var_re.max(0.0).sqrt(), self.var_im.max(0.0).sqrt())
    }
}

/// Mixture pooling of member predictions:
/// `μ* = (1/J)Σμᵢ`, `σ*² = (1/J)Σ(σᵢ² + μᵢ²) − μ*²`.
pub fn pool(members: &[MemberPrediction]) -> (f64, f64) {
    let j = members.len() as f64;
    let mu_star = members.iter().map(|m| m.mu).sum::<f64>() / j;
    let second = members
        .iter()
        .map(|m| m.sigma * m.sigma + m.mu * m.mu)
        .sum::<f64>()
        / j;
    // Guard the subtraction against cancellation dipping below zero.
    (mu_star, (second - mu_star * mu_star).max(0.0))
}

/// Candidate ranking score: summed pooled variances of the two parts.
pub fn acquisition_score(pred: &SurrogatePrediction) -> f64 {
    pred.var_re + pred.var_im
}

/// Relative L2 mismatch of complex vectors: `|u − v|₂ / |v|₂`.
pub fn fractional_error(estimates: &[Complex64], truths: &[Complex64]) -> Result<f64> {
    if estimates.len() != truths.len() || truths.is_empty() {
        return Err(Error::Validation(format!(
            "fractional error needs equal nonempty lengths, got {} and {}",
            estimates.len(),
            truths.len()
        )));
    }
    let num: f64 = estimates
        .iter()
        .zip(truths)
        .map(|(u, v)| (u - v).norm_sqr())
        .sum();
    let den: f64 = truths.iter().map(|v| v.norm_sqr()).sum();
    if den == 0.0 {
        return Err(Error::Numeric("truth vector has zero norm".into()));
    }
    Ok((num / den).sqrt())
}

/// Input-side gradients of a pooled prediction (length-13 each).
#[derive(Debug, Clone, Copy)]
pub struct PredictionGradient {
    pub dmu_re: [f64; NETWORK_INPUTS],
    pub dmu_im: [f64; NETWORK_INPUTS],
    pub dvar_re: [f64; NETWORK_INPUTS],
    pub dvar_im: [f64; NETWORK_INPUTS],
}

/// The trained surrogate: J members per part plus the cell it encodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub re_members: Vec<MlpParams>,
    pub im_members: Vec<MlpParams>,
    pub config: EnsembleConfig,
    pub cell: UnitCellSpec,
}

impl Ensemble {
    /// Train a fresh ensemble: every member sees the same rows but its own
    /// initialization and batch shuffles. `round` diversifies the shuffle
    /// streams across successive retraining rounds.
    pub fn fit(
        cell: &UnitCellSpec,
        config: &EnsembleConfig,
        data: &[(NetworkInput, Complex64)],
        round: u64,
    ) -> Result<Self> {
        config.validate()?;
        let init = |seed: u64| MlpParams::init(&config.mlp, seed);
        let mut re_members = Vec::with_capacity(config.members_per_part);
        let mut im_members = Vec::with_capacity(config.members_per_part);
        for (j, &seed) in config.member_seeds.iter().enumerate() {
            let part_re = j < config.members_per_part;
            let labeled: Vec<(NetworkInput, f64)> = data
                .iter()
                .map(|(x, t)| (*x, if part_re { t.re } else { t.im }))
                .collect();
            let cfg = TrainConfig {
                seed: rng::derive_seed(seed, "train-round", round),
                ..config.train.clone()
            };
            let report = train(init(seed)?, &labeled, &cfg)?;
            if part_re {
                re_members.push(report.params);
            } else {
                im_members.push(report.params);
            }
        }
        Ok(Self {
            re_members,
            im_members,
            config: config.clone(),
            cell: cell.clone(),
        })
    }

    /// Continue training every member from its current weights (fresh Adam
    /// state) on an augmented dataset.
    pub fn refit(&self, data: &[(NetworkInput, Complex64)], round: u64) -> Result<Self> {
        let mut out = self.clone();
        for (j, &seed) in self.config.member_seeds.iter().enumerate() {
            let part_re = j < self.config.members_per_part;
            let labeled: Vec<(NetworkInput, f64)> = data
                .iter()
                .map(|(x, t)| (*x, if part_re { t.re } else { t.im }))
                .collect();
            let cfg = TrainConfig {
                seed: rng::derive_seed(seed, "train-round", round),
                ..self.config.train.clone()
            };
            let member = if part_re {
                &self.re_members[j]
            } else {
                &self.im_members[j - self.config.members_per_part]
            };
            let report = train(member.clone(), &labeled, &cfg)?;
            if part_re {
                out.re_members[j] = report.params;
            } else {
                out.im_members[j - self.config.members_per_part] = report.params;
            }
        }
        Ok(out)
    }

    /// Pooled prediction at a parameter vector (bounds-checked).
    pub fn predict(&self, p: &ParamVector, f: FrequencyId) -> Result<SurrogatePrediction> {
        let x = encode_input(p, f, &self.cell)?;
        self.predict_encoded(&x)
    }

    /// Pooled prediction at an already-encoded input.
    pub fn predict_encoded(&self, x: &NetworkInput) -> Result<SurrogatePrediction> {
        let preds_re: Vec<MemberPrediction> = self
            .re_members
            .iter()
            .map(|m| forward(m, x))
            .collect::<Result<_>>()?;
        let preds_im: Vec<MemberPrediction> = self
            .im_members
            .iter()
            .map(|m| forward(m, x))
            .collect::<Result<_>>()?;
        let (mu_re, var_re) = pool(&preds_re);
        let (mu_im, var_im) = pool(&preds_im);
        Ok(SurrogatePrediction {
            mu_re,
            mu_im,
            var_re,
            var_im,
        })
    }

    /// Pooled predictions for many encoded inputs at once; output order
    /// matches input order.
    pub fn predict_batch_encoded(&self, xs: &[NetworkInput]) -> Vec<SurrogatePrediction> {
        let n = xs.len();
        if n == 0 {
            return Vec::new();
        }
        let mut x = Array2::zeros((n, NETWORK_INPUTS));
        for (i, xi) in xs.iter().enumerate() {
            for (j, &v) in xi.0.iter().enumerate() {
                x[[i, j]] = v;
            }
        }
        let j = self.config.members_per_part as f64;
        let mut mu = [vec![0.0; n], vec![0.0; n]];
        let mut second = [vec![0.0; n], vec![0.0; n]];
        for (part, members) in [&self.re_members, &self.im_members].into_iter().enumerate() {
            for m in members {
                let cache = forward_batch(m, &x);
                for i in 0..n {
                    let (mi, si) = (cache.mu[i], cache.sigma[i]);
                    mu[part][i] += mi;
                    second[part][i] += si * si + mi * mi;
                }
            }
        }
        (0..n)
            .map(|i| {
                let mu_re = mu[0][i] / j;
                let mu_im = mu[1][i] / j;
                SurrogatePrediction {
                    mu_re,
                    mu_im,
                    var_re: (second[0][i] / j - mu_re * mu_re).max(0.0),
                    var_im: (second[1][i] / j - mu_im * mu_im).max(0.0),
                }
            })
            .collect()
    }

    /// Prediction plus input-side gradients of pooled means and variances.
    pub fn predict_with_gradient(
        &self,
        x: &NetworkInput,
    ) -> Result<(SurrogatePrediction, PredictionGradient)> {
        let j = self.config.members_per_part as f64;
        let mut grad = PredictionGradient {
            dmu_re: [0.0; NETWORK_INPUTS],
            dmu_im: [0.0; NETWORK_INPUTS],
            dvar_re: [0.0; NETWORK_INPUTS],
            dvar_im: [0.0; NETWORK_INPUTS],
        };
        let mut pooled = [(0.0, 0.0); 2];
        for (part, members) in [&self.re_members, &self.im_members].into_iter().enumerate() {
            let mut preds = Vec::with_capacity(members.len());
            let mut dmus = Vec::with_capacity(members.len());
            let mut dsigs = Vec::with_capacity(members.len());
            for m in members {
                preds.push(forward(m, x)?);
                let (dmu, dsig) = input_gradient(m, x)?;
                dmus.push(dmu);
                dsigs.push(dsig);
            }
            let (mu_star, var_star) = pool(&preds);
            pooled[part] = (mu_star, var_star);
            for k in 0..NETWORK_INPUTS {
                let dmu_star = dmus.iter().map(|d| d[k]).sum::<f64>() / j;
                // d/dx [(1/J)Σ(σᵢ²+μᵢ²) − μ*²]
                let dsecond = preds
                    .iter()
                    .zip(dmus.iter().zip(&dsigs))
                    .map(|(p, (dmu, dsig))| 2.0 * p.sigma * dsig[k] + 2.0 * p.mu * dmu[k])
                    .sum::<f64>()
                    / j;
                let dvar = dsecond - 2.0 * pooled[part].0 * dmu_star;
                if part == 0 {
                    grad.dmu_re[k] = dmu_star;
                    grad.dvar_re[k] = dvar;
                } else {
                    grad.dmu_im[k] = dmu_star;
                    grad.dvar_im[k] = dvar;
                }
            }
        }
        Ok((
            SurrogatePrediction {
                mu_re: pooled[0].0,
                mu_im: pooled[1].0,
                var_re: pooled[0].1.max(0.0),
                var_im: pooled[1].1.max(0.0),
            },
            grad,
        ))
    }

    /// Singular values of the finite-difference Hessian of μ* (per part) in
    /// normalized coordinates, sorted descending.
    pub fn hessian_spectrum(
        &self,
        p: &ParamVector,
        f: FrequencyId,
        h: f64,
    ) -> Result<HessianSpectrum> {
        if !(h > 0.0) {
            return Err(Error::Config(format!("step must be positive, got {h}")));
        }
        let x0 = normalize(p, &self.cell)?;
        for &xi in &x0 {
            if xi < -1.0 + h || xi > 1.0 - h {
                return Err(Error::Bounds(format!(
                    "point must sit at least {h} inside the normalized cube"
                )));
            }
        }
        let one_hot = f.one_hot();
        let eval = |x: &[f64]| -> (f64, f64) {
            let mut full = [0.0; NETWORK_INPUTS];
            full[..NETWORK_WIDTHS].copy_from_slice(x);
            full[NETWORK_WIDTHS..].copy_from_slice(&one_hot);
            let pred = self
                .predict_encoded(&NetworkInput(full))
                .expect("finite encoded input");
            (pred.mu_re, pred.mu_im)
        };
        let (h_re, h_im) = fd_hessian_pair(eval, &x0, h);
        Ok(HessianSpectrum {
            re: singular_values_symmetric(&h_re),
            im: singular_values_symmetric(&h_im),
        })
    }

    /// Singular values of the exact Hessian of μ* (per part) in normalized
    /// coordinates, sorted descending.
    ///
    /// With ReLU hidden layers the pre-head activation is piecewise linear,
    /// so away from kinks each member's Hessian is exactly
    /// `−2t/(s(1−t²)) · ∇μ∇μᵀ` with `t = μ/s`, and the pooled mean's Hessian
    /// is the member average. Unlike [`Self::hessian_spectrum`] this has no
    /// step-size parameter, so it reads the trained function's curvature
    /// without finite-difference contamination from sub-resolution
    /// microstructure.
    pub fn hessian_spectrum_exact(
        &self,
        p: &ParamVector,
        f: FrequencyId,
    ) -> Result<HessianSpectrum> {
        let x0 = normalize(p, &self.cell)?;
        let mut full = [0.0; NETWORK_INPUTS];
        full[..NETWORK_WIDTHS].copy_from_slice(&x0);
        full[NETWORK_WIDTHS..].copy_from_slice(&f.one_hot());
        let input = NetworkInput(full);

        let spectrum = |members: &[MlpParams]| -> Result<Vec<f64>> {
            let mut hess = Array2::zeros((NETWORK_WIDTHS, NETWORK_WIDTHS));
            for params in members {
                let pred = forward(params, &input)?;
                let t = pred.mu / params.tanh_scale;
                let denom = params.tanh_scale * (1.0 - t * t);
                if denom == 0.0 {
                    // Saturated head: f'' and ∇μ both vanish.
                    continue;
                }
                let c = -2.0 * t / (denom * members.len() as f64);
                let (dmu, _) = input_gradient(params, &input)?;
                for i in 0..NETWORK_WIDTHS {
                    for j in 0..NETWORK_WIDTHS {
                        hess[[i, j]] += c * dmu[i] * dmu[j];
                    }
                }
            }
            Ok(singular_values_symmetric(&hess))
        };
        Ok(HessianSpectrum {
            re: spectrum(&self.re_members)?,
            im: spectrum(&self.im_members)?,
        })
    }
}

/// Per-part Hessian singular values, descending.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HessianSpectrum {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

/// Central-difference Hessians of a pair of scalar functions evaluated
/// together (one call returns both values).
pub fn fd_hessian_pair(
    eval: impl Fn(&[f64]) -> (f64, f64),
    x0: &[f64],
    h: f64,
) -> (Array2<f64>, Array2<f64>) {
    let d = x0.len();
    let mut h_re = Array2::zeros((d, d));
    let mut h_im = Array2::zeros((d, d));
    let f0 = eval(x0);
    let mut x = x0.to_vec();
    for i in 0..d {
        x[i] = x0[i] + h;
        let fp = eval(&x);
        x[i] = x0[i] - h;
        let fm = eval(&x);
        x[i] = x0[i];
        h_re[[i, i]] = (fp.0 - 2.0 * f0.0 + fm.0) / (h * h);
        h_im[[i, i]] = (fp.1 - 2.0 * f0.1 + fm.1) / (h * h);
        for j in (i + 1)..d {
            x[i] = x0[i] + h;
            x[j] = x0[j] + h;
            let fpp = eval(&x);
            x[j] = x0[j] - h;
            let fpm = eval(&x);
            x[i] = x0[i] - h;
            x[j] = x0[j] + h;
            let fmp = eval(&x);
            x[j] = x0[j] - h;
            let fmm = eval(&x);
            x[i] = x0[i];
            x[j] = x0[j];
            let dre = (fpp.0 - fpm.0 - fmp.0 + fmm.0) / (4.0 * h * h);
            let dim = (fpp.1 - fpm.1 - fmp.1 + fmm.1) / (4.0 * h * h);
            h_re[[i, j]] = dre;
            h_re[[j, i]] = dre;
            h_im[[i, j]] = dim;
            h_im[[j, i]] = dim;
        }
    }
    (h_re, h_im)
}

/// Absolute eigenvalues of a symmetric matrix, sorted descending
/// (the singular values), via cyclic Jacobi rotations.
pub fn singular_values_symmetric(a: &Array2<f64>) -> Vec<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "matrix must be square");
    let mut m = a.clone();
    let scale = m.iter().fold(0.0_f64, |s, &v| s.max(v.abs())).max(1e-300);
    for _sweep in 0..60 {
        let off: f64 = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| m[[i, j]] * m[[i, j]])
            .sum();
        if off.sqrt() <= 1e-14 * scale * n as f64 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..n {
                    let (aip, aiq) = (m[[i, p]], m[[i, q]]);
                    m[[i, p]] = c * aip - s * aiq;
                    m[[i, q]] = s * aip + c * aiq;
                }
                for i in 0..n {
                    let (api, aqi) = (m[[p, i]], m[[q, i]]);
                    m[[p, i]] = c * api - s * aqi;
                    m[[q, i]] = s * api + c * aqi;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[[i, i]].abs()).collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    eig
}

/// Serialized ensemble plus a fingerprint of the dataset it was trained on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleCheckpoint {
    pub ensemble: Ensemble,
    /// SHA-256 (hex) of the training CSV bytes, or empty if not file-backed.
    pub dataset_sha256: String,
}

/// Hex SHA-256 of a file, for checkpoint fingerprints.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

pub fn save_ensemble(path: &Path, ckpt: &EnsembleCheckpoint) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(file, ckpt)?;
    Ok(())
}

pub fn load_ensemble(path: &Path) -> Result<EnsembleCheckpoint> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    Ok(serde_json::from_reader(file)?)
}
