//! 2D frequency-domain Helmholtz labeler for unit-cell transmission.
//!
//! Solves `∇²u + k₀²ε(x,y)u = 0` on a square-pixel grid, periodic in x and
//! terminated in ±y by complex coordinate-stretched absorbing layers. A unit
//! planewave enters from the substrate side through a total-field /
//! scattered-field row, and the complex transmission t is the planewave-mode
//! overlap on an air-side monitor row, normalized by the same overlap of an
//! empty-cell (bare interface) reference solve — so an empty structure gives
//! t = 1 exactly.
//!
//! The permittivity entering the operator is dispersion-corrected so that
//! normally propagating discrete waves carry the exact continuous wavevector
//! `k₀n`; laterally uniform stacks therefore agree with the transfer-matrix
//! oracle in `tmm` to solver precision, independent of grid resolution.

pub mod band;
pub mod tmm;

use std::time::Instant;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{FrequencyId, ParamVector, UnitCellSpec};
use band::BandedMatrix;

/// Post-solve bound on |t| for lossless cells.
pub const ENERGY_TOL: f64 = 0.05;
/// Relative residual required of every linear solve.
pub const RESIDUAL_TOL: f64 = 1e-8;
/// Polynomial grading order of the absorber profile.
const PML_ORDER: f64 = 3.0;
/// Target round-trip amplitude reflection of the absorber.
const PML_R0: f64 = 1e-6;

/// Discretization and vertical layout of one solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    /// Pixel size (nm); pixels are square.
    pub dx: f64,
    pub nx: usize,
    pub ny: usize,
    /// Absorber thickness in pixels at each of the ±y ends.
    pub pml_px: usize,
    pub wavelength_nm: f64,
    /// Height of the structured region this grid was sized for (nm).
    pub structure_height_nm: f64,
    /// First total-field row (source boundary sits between this and the row below).
    pub y_src: usize,
    /// Scattered-field row used to read the reflected wave.
    pub y_reflect: usize,
    /// Transmission monitor row, in air above the structure.
    pub y_monitor: usize,
    /// Grid line (in pixels) of the substrate/structure interface.
    pub y_base_px: usize,
}

impl Grid2D {
    /// Lay out a grid: absorber, substrate run-in, structure, one-wavelength
    /// air gap to the monitor, margin, absorber.
    pub fn build(
        period_nm: f64,
        structure_height_nm: f64,
        wavelength_nm: f64,
        dx: f64,
    ) -> Result<Self> {
        if !(dx > 0.0 && period_nm > 0.0 && wavelength_nm > 0.0 && structure_height_nm >= 0.0) {
            return Err(Error::Config(
                "grid needs positive dx, period, wavelength and nonnegative height".into(),
            ));
        }
        let nx = (period_nm / dx).round() as usize;
        if nx < 2 || (nx as f64 * dx - period_nm).abs() > 1e-6 * period_nm {
            return Err(Error::Config(format!(
                "period {period_nm} nm is not a multiple (>= 2) of dx = {dx} nm"
            )));
        }
        let px = |len: f64| (len / dx).ceil() as usize;
        let pml_px = px(0.6 * wavelength_nm);
        let below_px = px(0.8 * wavelength_nm);
        let above_px = px(1.25 * wavelength_nm);
        let struct_px = px(structure_height_nm);
        let y_base_px = pml_px + below_px;
        let ny = y_base_px + struct_px + above_px + pml_px;
        let monitor_line = y_base_px as f64 * dx + structure_height_nm + wavelength_nm;
        let y_monitor = (monitor_line / dx - 0.5).round() as usize;
        let grid = Self {
            dx,
            nx,
            ny,
            pml_px,
            wavelength_nm,
            structure_height_nm,
            y_src: pml_px + px(0.25 * wavelength_nm),
            y_reflect: pml_px + px(0.1 * wavelength_nm),
            y_monitor,
            y_base_px,
        };
        debug_assert!(grid.y_reflect < grid.y_src && grid.y_src < grid.y_base_px);
        debug_assert!(grid.y_monitor < grid.ny - grid.pml_px);
        Ok(grid)
    }

    /// Grid sized for a unit-cell solve at one wavelength.
    pub fn for_cell(spec: &UnitCellSpec, wavelength_nm: f64, dx: f64) -> Result<Self> {
        Self::build(spec.period_nm, spec.structure_height_nm(), wavelength_nm, dx)
    }

    /// y-coordinate of the center of row `j` (nm).
    pub fn y_center(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.dx
    }

    /// y-coordinate of the substrate/structure interface (nm).
    pub fn y_base(&self) -> f64 {
        self.y_base_px as f64 * self.dx
    }
}

/// Default pixel size for a cell family: 10 nm, dropping to 1 nm when the
/// narrowest hole would otherwise span fewer than 2 pixels.
pub fn default_dx(spec: &UnitCellSpec) -> f64 {
    if spec.width_min_nm >= 20.0 {
        10.0
    } else {
        1.0
    }
}

/// Paint a unit cell onto the grid: substrate below the interface, the hole
/// stack above it, background above the stack. Pixels take the permittivity
/// of the region containing their center — values are exactly the squared
/// indices, never blended.
pub fn rasterize(spec: &UnitCellSpec, p: &ParamVector, grid: &Grid2D) -> Result<Array2<f64>> {
    p.check(spec)?;
    if (grid.nx as f64 * grid.dx - spec.period_nm).abs() > 1e-6 * spec.period_nm {
        return Err(Error::Config(format!(
            "grid period {} nm does not match cell period {} nm",
            grid.nx as f64 * grid.dx,
            spec.period_nm
        )));
    }
    if (grid.structure_height_nm - spec.structure_height_nm()).abs() > 1e-9 {
        return Err(Error::Config(
            "grid was laid out for a different structure height".into(),
        ));
    }
    if spec.width_min_nm / grid.dx < 2.0 {
        return Err(Error::Resolution(format!(
            "dx = {} nm puts fewer than 2 pixels across the narrowest {} nm hole",
            grid.dx, spec.width_min_nm
        )));
    }
    let eps_sub = spec.n_substrate * spec.n_substrate;
    let eps_hole = spec.n_hole * spec.n_hole;
    let eps_bg = spec.n_background * spec.n_background;
    let y_base = grid.y_base();
    let height = spec.structure_height_nm();
    let layer_pitch = spec.hole_height_nm + spec.spacer_height_nm;
    let cx = spec.period_nm / 2.0;
    let mut map = Array2::zeros((grid.nx, grid.ny));
    for j in 0..grid.ny {
        let y = grid.y_center(j) - y_base;
        let row_kind = if y < 0.0 {
            RowKind::Substrate
        } else if y < height {
            let k = ((y / layer_pitch) as usize).min(spec.layer_count - 1);
            let within = y - k as f64 * layer_pitch;
            if within < spec.hole_height_nm {
                RowKind::Hole(p.widths_nm[k])
            } else {
                RowKind::Substrate
            }
        } else {
            RowKind::Background
        };
        for i in 0..grid.nx {
            let x = (i as f64 + 0.5) * grid.dx;
            map[[i, j]] = match row_kind {
                RowKind::Substrate => eps_sub,
                RowKind::Background => eps_bg,
                RowKind::Hole(w) => {
                    if (x - cx).abs() < w / 2.0 {
                        eps_hole
                    } else {
                        eps_sub
                    }
                }
            };
        }
    }
    Ok(map)
}

enum RowKind {
    Substrate,
    Background,
    Hole(f64),
}

/// Paint a laterally uniform layer stack: `n_below` half-space under the
/// interface, the listed layers above it, `n_above` for everything higher.
/// The stack may be shorter than the grid's structured region (an empty
/// stack paints the bare interface used as the reference solve).
pub fn rasterize_stack(
    layers: &[(f64, f64)],
    n_below: f64,
    n_above: f64,
    grid: &Grid2D,
) -> Result<Array2<f64>> {
    let total: f64 = layers.iter().map(|&(d, _)| d).sum();
    if total > grid.structure_height_nm + 1e-9 {
        return Err(Error::Config(format!(
            "stack height {total} nm exceeds the grid's structured region {} nm",
            grid.structure_height_nm
        )));
    }
    for &(d, n) in layers {
        if !(d >= 0.0 && n >= 1.0) {
            return Err(Error::Config(format!(
                "invalid layer (thickness {d} nm, index {n})"
            )));
        }
    }
    let y_base = grid.y_base();
    let mut map = Array2::zeros((grid.nx, grid.ny));
    for j in 0..grid.ny {
        let y = grid.y_center(j) - y_base;
        let eps = if y < 0.0 {
            n_below * n_below
        } else {
            let mut acc = 0.0;
            let mut found = None;
            for &(d, n) in layers {
                if y < acc + d {
                    found = Some(n * n);
                    break;
                }
                acc += d;
            }
            found.unwrap_or(n_above * n_above)
        };
        for i in 0..grid.nx {
            map[[i, j]] = eps;
        }
    }
    Ok(map)
}

/// y-direction stencil factors with the absorber's complex stretch, plus the
/// dispersion-corrected permittivity term.
struct Stencil {
    k0: f64,
    h: f64,
    ny: usize,
    pml_px: usize,
    sigma_max: f64,
}

impl Stencil {
    fn new(grid: &Grid2D) -> Self {
        let l = grid.pml_px as f64 * grid.dx;
        Self {
            k0: 2.0 * std::f64::consts::PI / grid.wavelength_nm,
            h: grid.dx,
            ny: grid.ny,
            pml_px: grid.pml_px,
            sigma_max: (PML_ORDER + 1.0) * (-PML_R0.ln()) / (2.0 * l),
        }
    }

    fn sigma(&self, y: f64) -> f64 {
        let l = self.pml_px as f64 * self.h;
        let y_lo = l;
        let y_hi = (self.ny - self.pml_px) as f64 * self.h;
        let depth = if y < y_lo {
            y_lo - y
        } else if y > y_hi {
            y - y_hi
        } else {
            return 0.0;
        };
        self.sigma_max * (depth / l).powi(PML_ORDER as i32)
    }

    fn inv_stretch(&self, y: f64) -> Complex64 {
        1.0 / Complex64::new(1.0, self.sigma(y) / self.k0)
    }

    /// Couplings of row j to (j−1, j+1) and its own y-part diagonal.
    fn y_coeffs(&self, j: usize) -> (Complex64, Complex64, Complex64) {
        let inv_h2 = 1.0 / (self.h * self.h);
        let gc = self.inv_stretch((j as f64 + 0.5) * self.h);
        let gd = self.inv_stretch(j as f64 * self.h);
        let gu = self.inv_stretch((j as f64 + 1.0) * self.h);
        (gc * gd * inv_h2, gc * gu * inv_h2, -gc * (gd + gu) * inv_h2)
    }

    /// Discrete-dispersion-corrected `k₀²ε`: chosen so the exact wavevector
    /// `k₀√ε` solves the discrete 1D Helmholtz equation.
    fn kappa(&self, eps: f64) -> f64 {
        let arg = self.k0 * self.h * eps.sqrt();
        (2.0 - 2.0 * arg.cos()) / (self.h * self.h)
    }
}

/// Solve one map. Returns the full complex field, `[nx, ny]`.
pub fn solve_cell(map: &Array2<f64>, grid: &Grid2D) -> Result<Array2<Complex64>> {
    let (nx, ny) = (grid.nx, grid.ny);
    if map.dim() != (nx, ny) {
        return Err(Error::Config(format!(
            "map shape {:?} does not match grid {}x{}",
            map.dim(),
            nx,
            ny
        )));
    }
    if map.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("permittivity map has non-finite entries".into()));
    }
    // The incident wave is only defined in a uniform medium: everything at
    // and below the source row must share one permittivity.
    let eps_src = map[[0, grid.y_src]];
    for j in 0..=grid.y_src {
        for i in 0..nx {
            if map[[i, j]] != eps_src {
                return Err(Error::Config(
                    "medium below the source row must be uniform".into(),
                ));
            }
        }
    }

    let st = Stencil::new(grid);
    let n = nx * ny;
    let inv_h2 = 1.0 / (grid.dx * grid.dx);
    let mut mat = BandedMatrix::new(n, nx, nx);
    for j in 0..ny {
        let (c_down, c_up, c_ydiag) = st.y_coeffs(j);
        for i in 0..nx {
            let row = j * nx + i;
            let diag = c_ydiag + Complex64::new(st.kappa(map[[i, j]]) - 2.0 * inv_h2, 0.0);
            mat.add(row, row, diag);
            mat.add(row, j * nx + (i + 1) % nx, Complex64::new(inv_h2, 0.0));
            mat.add(row, j * nx + (i + nx - 1) % nx, Complex64::new(inv_h2, 0.0));
            if j > 0 {
                mat.add(row, row - nx, c_down);
            }
            if j + 1 < ny {
                mat.add(row, row + nx, c_up);
            }
        }
    }

    // Total-field/scattered-field source: the incident wave enters the system
    // only through the two rows straddling the source boundary.
    let k_sub = st.k0 * eps_src.sqrt();
    let y_base = grid.y_base();
    let u_inc = |j: usize| Complex64::from_polar(1.0, k_sub * (grid.y_center(j) - y_base));
    let mut rhs = vec![Complex64::new(0.0, 0.0); n];
    let (c_down_src, _, _) = st.y_coeffs(grid.y_src);
    let (_, c_up_below, _) = st.y_coeffs(grid.y_src - 1);
    for i in 0..nx {
        rhs[grid.y_src * nx + i] -= c_down_src * u_inc(grid.y_src - 1);
        rhs[(grid.y_src - 1) * nx + i] += c_up_below * u_inc(grid.y_src);
    }

    mat.factor()?;
    let mut x = rhs.clone();
    mat.solve(&mut x)?;

    // Honest a-posteriori check against the freshly applied operator.
    let applied = apply_operator(map, grid, &st, &x);
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, f) in applied.iter().zip(&rhs) {
        num += (a - f).norm_sqr();
        den += f.norm_sqr();
    }
    let rel = (num / den).sqrt();
    if !(rel <= RESIDUAL_TOL) {
        return Err(Error::Solver(format!(
            "linear solve residual {rel:.3e} exceeds {RESIDUAL_TOL:.0e}"
        )));
    }

    let mut field = Array2::zeros((nx, ny));
    for j in 0..ny {
        for i in 0..nx {
            field[[i, j]] = x[j * nx + i];
        }
    }
    Ok(field)
}

fn apply_operator(
    map: &Array2<f64>,
    grid: &Grid2D,
    st: &Stencil,
    x: &[Complex64],
) -> Vec<Complex64> {
    let (nx, ny) = (grid.nx, grid.ny);
    let inv_h2 = 1.0 / (grid.dx * grid.dx);
    let mut out = vec![Complex64::new(0.0, 0.0); nx * ny];
    for j in 0..ny {
        let (c_down, c_up, c_ydiag) = st.y_coeffs(j);
        for i in 0..nx {
            let row = j * nx + i;
            let mut acc = (c_ydiag
                + Complex64::new(st.kappa(map[[i, j]]) - 2.0 * inv_h2, 0.0))
                * x[row];
            acc += inv_h2 * x[j * nx + (i + 1) % nx];
            acc += inv_h2 * x[j * nx + (i + nx - 1) % nx];
            if j > 0 {
                acc += c_down * x[row - nx];
            }
            if j + 1 < ny {
                acc += c_up * x[row + nx];
            }
            out[row] = acc;
        }
    }
    out
}

/// Planewave-mode amplitude of one row: the lateral mean, which projects out
/// every nonzero diffraction order exactly.
pub fn mode_overlap(field: &Array2<Complex64>, row: usize) -> Complex64 {
    let nx = field.nrows();
    field.column(row).sum() / nx as f64
}

/// Transmission of a solve relative to its empty-cell reference.
pub fn extract_transmission(
    field: &Array2<Complex64>,
    reference: &Array2<Complex64>,
    grid: &Grid2D,
) -> Result<Complex64> {
    if field.dim() != reference.dim() || field.dim() != (grid.nx, grid.ny) {
        return Err(Error::Config("field shapes do not match the grid".into()));
    }
    if grid.y_monitor < grid.pml_px || grid.y_monitor >= grid.ny - grid.pml_px {
        return Err(Error::Config("monitor row lies inside the absorber".into()));
    }
    let denom = mode_overlap(reference, grid.y_monitor);
    if denom.norm() < 1e-12 {
        return Err(Error::Numeric("reference monitor overlap is zero".into()));
    }
    Ok(mode_overlap(field, grid.y_monitor) / denom)
}

/// Transmitted and reflected power fractions of a solve, valid when only the
/// zeroth diffraction order propagates on each side.
pub fn power_balance(
    field: &Array2<Complex64>,
    grid: &Grid2D,
    n_below: f64,
    n_above: f64,
) -> (f64, f64) {
    let t_amp = mode_overlap(field, grid.y_monitor).norm();
    let r_amp = mode_overlap(field, grid.y_reflect).norm();
    ((n_above / n_below) * t_amp * t_amp, r_amp * r_amp)
}

/// One oracle evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveRecord {
    pub params: ParamVector,
    pub frequency: FrequencyId,
    pub t: Complex64,
    pub wall_seconds: f64,
}

/// Solve the empty-cell reference once for a (cell, wavelength, dx) triple;
/// reusable across every structure solve on the same grid.
pub fn reference_field(
    spec: &UnitCellSpec,
    wavelength_nm: f64,
    dx: f64,
) -> Result<(Grid2D, Array2<Complex64>)> {
    let grid = Grid2D::for_cell(spec, wavelength_nm, dx)?;
    let map = rasterize_stack(&[], spec.n_substrate, spec.n_background, &grid)?;
    let field = solve_cell(&map, &grid)?;
    Ok((grid, field))
}

/// Transmission of one cell against a precomputed reference.
pub fn transmission_with_reference(
    spec: &UnitCellSpec,
    p: &ParamVector,
    grid: &Grid2D,
    reference: &Array2<Complex64>,
) -> Result<Complex64> {
    let map = rasterize(spec, p, grid)?;
    let field = solve_cell(&map, grid)?;
    let t = extract_transmission(&field, reference, grid)?;
    if t.norm() > 1.0 + ENERGY_TOL {
        return Err(Error::Solver(format!(
            "|t| = {} violates the lossless energy bound",
            t.norm()
        )));
    }
    Ok(t)
}

/// Full labeling pipeline for one (params, frequency) pair.
pub fn label(
    spec: &UnitCellSpec,
    p: &ParamVector,
    f: FrequencyId,
    dx: f64,
) -> Result<SolveRecord> {
    let start = Instant::now();
    let (grid, reference) = reference_field(spec, f.wavelength_nm(), dx)?;
    let t = transmission_with_reference(spec, p, &grid, &reference)?;
    Ok(SolveRecord {
        params: p.clone(),
        frequency: f,
        t,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// FDFD transmission of a laterally uniform stack (testing aid): silica-like
/// half-space below, `n_above` above, normalized like a cell solve.
pub fn label_stack(
    layers: &[(f64, f64)],
    wavelength_nm: f64,
    dx: f64,
    n_below: f64,
    n_above: f64,
) -> Result<Complex64> {
    let height: f64 = layers.iter().map(|&(d, _)| d).sum();
    let grid = Grid2D::build(4.0 * dx, height, wavelength_nm, dx)?;
    let map = rasterize_stack(layers, n_below, n_above, &grid)?;
    let reference = rasterize_stack(&[], n_below, n_above, &grid)?;
    let field = solve_cell(&map, &grid)?;
    let ref_field = solve_cell(&reference, &grid)?;
    extract_transmission(&field, &ref_field, &grid)
}
