//! Transfer-matrix transmission of 1D layered stacks.
//!
//! Independent of the 2D solver: propagates (u, u′) through each layer with
//! the exact characteristic matrix and matches half-space radiation
//! conditions on both sides. Used as the verification oracle for FDFD runs
//! on laterally uniform structures.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Amplitude transmission of a layer stack between an incidence half-space
/// of index `n_in` and an exit half-space of index `n_out`, normal
/// incidence. Output phase is referenced to the exit face of the stack.
pub fn transfer_matrix_stack(
    layers: &[(f64, f64)],
    wavelength_nm: f64,
    n_in: f64,
    n_out: f64,
) -> Result<Complex64> {
    if !(wavelength_nm > 0.0) {
        return Err(Error::Config(format!(
            "wavelength must be positive, got {wavelength_nm}"
        )));
    }
    if !(n_in >= 1.0 && n_out >= 1.0) {
        return Err(Error::Config("half-space indices must be >= 1".into()));
    }
    let k0 = 2.0 * std::f64::consts::PI / wavelength_nm;
    // Characteristic matrix acting on (u, u′), accumulated over the stack.
    let mut m = [
        [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)],
        [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)],
    ];
    for &(thickness, index) in layers {
        if !(thickness >= 0.0) || !(index >= 1.0) {
            return Err(Error::Config(format!(
                "invalid layer (thickness {thickness} nm, index {index})"
            )));
        }
        let kn = k0 * index;
        let delta = kn * thickness;
        let (s, c) = delta.sin_cos();
        let layer = [
            [Complex64::new(c, 0.0), Complex64::new(s / kn, 0.0)],
            [Complex64::new(-kn * s, 0.0), Complex64::new(c, 0.0)],
        ];
        m = mat_mul(&layer, &m);
    }
    let ik_in = Complex64::new(0.0, k0 * n_in);
    let ik_out = Complex64::new(0.0, k0 * n_out);
    // u(0) = 1 + r, u′(0) = ik_in (1 − r); u(D) = t, u′(D) = ik_out t.
    let a = ik_out * m[0][0] - m[1][0];
    let b = ik_in * (ik_out * m[0][1] - m[1][1]);
    let denom = a - b;
    if denom.norm() == 0.0 {
        return Err(Error::Numeric("degenerate stack matching condition".into()));
    }
    let one_plus_r = -2.0 * b / denom;
    let one_minus_r = 2.0 * a / denom;
    Ok(m[0][0] * one_plus_r + ik_in * m[0][1] * one_minus_r)
}

/// The transmission value the 2D solver reports for a laterally uniform
/// stack: stack transmission over bare-interface transmission, with the
/// monitor's extra propagation across the stack height removed.
pub fn normalized_stack_transmission(
    layers: &[(f64, f64)],
    wavelength_nm: f64,
    n_below: f64,
    n_above: f64,
) -> Result<Complex64> {
    let t_stack = transfer_matrix_stack(layers, wavelength_nm, n_below, n_above)?;
    let t_bare = transfer_matrix_stack(&[], wavelength_nm, n_below, n_above)?;
    let height: f64 = layers.iter().map(|&(d, _)| d).sum();
    let k_above = 2.0 * std::f64::consts::PI / wavelength_nm * n_above;
    Ok(t_stack / t_bare * Complex64::new(0.0, -k_above * height).exp())
}

fn mat_mul(a: &[[Complex64; 2]; 2], b: &[[Complex64; 2]; 2]) -> [[Complex64; 2]; 2] {
    let mut out = [[Complex64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}
