//! Tensor-product Chebyshev interpolation over the normalized parameter cube.
//!
//! The classical grid-based competitor to the learned surrogate: sample the
//! target on a full tensor grid of Chebyshev–Gauss nodes (n per axis, n^d
//! total — every node is one oracle call), take the discrete Chebyshev
//! transform along each axis, and evaluate with a Clenshaw recurrence
//! contracted axis by axis. Complex targets are fit as two independent real
//! interpolants, mirroring the network's split.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::FrequencyId;

/// Hard cap on tensor-grid size; 4 points per axis in 10 dimensions
/// (1,048,576 nodes) is the largest supported configuration.
pub const MAX_TENSOR_NODES: usize = 1 << 21;

fn node_count(n: usize, d: usize) -> Result<usize> {
    if n == 0 || d == 0 {
        return Err(Error::Config("need n >= 1 points per axis and d >= 1 axes".into()));
    }
    match n.checked_pow(d as u32) {
        Some(total) if total <= MAX_TENSOR_NODES => Ok(total),
        _ => Err(Error::Capacity(format!(
            "{n}^{d} tensor nodes exceed the cap of {MAX_TENSOR_NODES}"
        ))),
    }
}

/// Chebyshev–Gauss nodes cos(π(k+½)/n), k = 0..n−1, descending in [−1, 1].
pub fn gauss_nodes(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| (std::f64::consts::PI * (k as f64 + 0.5) / n as f64).cos())
        .collect()
}

/// Full tensor grid in lexicographic order (first axis slowest). The
/// ordering is the contract between node labeling and `fit`.
pub fn tensor_nodes(n: usize, d: usize) -> Result<Vec<Vec<f64>>> {
    let total = node_count(n, d)?;
    let axis = gauss_nodes(n);
    let mut out = Vec::with_capacity(total);
    for t in 0..total {
        let mut point = vec![0.0; d];
        let mut rem = t;
        for a in (0..d).rev() {
            point[a] = axis[rem % n];
            rem /= n;
        }
        out.push(point);
    }
    Ok(out)
}

/// Coefficient tensor of one real-valued interpolant, stored flat in the
/// same lexicographic layout as `tensor_nodes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChebCoeffs {
    pub n: usize,
    pub d: usize,
    pub coeffs: Vec<f64>,
}

/// Discrete Chebyshev transform of node values, one axis at a time:
/// a_j = (2 − δ_{j0})/n · Σ_k v_k cos(πj(k+½)/n).
pub fn fit(n: usize, d: usize, values: &[f64]) -> Result<ChebCoeffs> {
    let total = node_count(n, d)?;
    if values.len() != total {
        return Err(Error::Validation(format!(
            "expected {total} node values ({n}^{d}), got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("node values must be finite".into()));
    }
    let mut cosmat = vec![0.0; n * n];
    for j in 0..n {
        for k in 0..n {
            cosmat[j * n + k] =
                (std::f64::consts::PI * j as f64 * (k as f64 + 0.5) / n as f64).cos();
        }
    }
    let mut data = values.to_vec();
    let mut gathered = vec![0.0; n];
    for axis in 0..d {
        let stride = n.pow((d - 1 - axis) as u32);
        let blocks = total / (n * stride);
        for b in 0..blocks {
            for q in 0..stride {
                let base = b * n * stride + q;
                for k in 0..n {
                    gathered[k] = data[base + k * stride];
                }
                for j in 0..n {
                    let scale = if j == 0 { 1.0 } else { 2.0 } / n as f64;
                    let mut acc = 0.0;
                    for k in 0..n {
                        acc += cosmat[j * n + k] * gathered[k];
                    }
                    data[base + j * stride] = scale * acc;
                }
            }
        }
    }
    Ok(ChebCoeffs { n, d, coeffs: data })
}

/// Clenshaw recurrence for Σ_j a_j T_j(x).
fn clenshaw(a: &[f64], x: f64) -> f64 {
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for &c in a.iter().skip(1).rev() {
        let b0 = c + 2.0 * x * b1 - b2;
        b2 = b1;
        b1 = b0;
    }
    a[0] + x * b1 - b2
}

/// Evaluate the interpolant by contracting one axis at a time (last axis
/// first, so every Clenshaw pass runs over contiguous memory).
pub fn eval(c: &ChebCoeffs, x: &[f64]) -> Result<f64> {
    if x.len() != c.d {
        return Err(Error::Config(format!(
            "point has {} coordinates, interpolant has {}",
            x.len(),
            c.d
        )));
    }
    for (a, &v) in x.iter().enumerate() {
        if !(-1.0..=1.0).contains(&v) {
            return Err(Error::Bounds(format!(
                "coordinate {a} = {v} outside the unit cube"
            )));
        }
    }
    let n = c.n;
    debug_assert_eq!(c.coeffs.len(), n.pow(c.d as u32));
    let mut buf = c.coeffs.clone();
    for axis in (0..c.d).rev() {
        let blocks = n.pow(axis as u32);
        for b in 0..blocks {
            buf[b] = clenshaw(&buf[b * n..(b + 1) * n], x[axis]);
        }
        buf.truncate(blocks);
    }
    Ok(buf[0])
}

/// Complex interpolant of one frequency's transmission: independent real
/// fits of the two parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChebModel {
    pub frequency: FrequencyId,
    pub re: ChebCoeffs,
    pub im: ChebCoeffs,
}

impl ChebModel {
    pub fn fit(
        frequency: FrequencyId,
        n: usize,
        d: usize,
        values: &[Complex64],
    ) -> Result<Self> {
        let re: Vec<f64> = values.iter().map(|t| t.re).collect();
        let im: Vec<f64> = values.iter().map(|t| t.im).collect();
        Ok(Self {
            frequency,
            re: fit(n, d, &re)?,
            im: fit(n, d, &im)?,
        })
    }

    pub fn eval(&self, x: &[f64]) -> Result<Complex64> {
        Ok(Complex64::new(eval(&self.re, x)?, eval(&self.im, x)?))
    }
}

pub fn save_model(model: &ChebModel, path: &Path) -> Result<()> {
    Ok(std::fs::write(path, serde_json::to_string_pretty(model)?)?)
}

pub fn load_model(path: &Path) -> Result<ChebModel> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
