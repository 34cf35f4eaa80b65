//! Metasurface assembly and far-field design.
//!
//! A design is a contiguous row of unit cells on a shared pitch.  Each cell's
//! complex transmission — surrogate mean/spread or validated solver labels —
//! radiates through a 2D outgoing-wave kernel onto observation points above
//! the surface.  The design objective is the worst of the three per-wavelength
//! expected focal intensities; a soft-min relaxation makes it differentiable,
//! and surrogate input gradients drive projected ascent.  Finished designs are
//! validated cell-by-cell with the direct solver.

use crate::error::{Error, Result};
use crate::fdfd;
use crate::geometry::{
    denormalize, encode_input, normalize, FrequencyId, ParamVector, UnitCellSpec, NETWORK_WIDTHS,
};
use crate::nnet::{ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
use crate::rng;
use crate::surrogate::Ensemble;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::time::Instant;

/// Aperture size used for full-scale designs.
pub const DEFAULT_CELL_COUNT: usize = 100;

/// The asymptotic kernel is invalid near the aperture; observation points
/// closer than this many wavelengths to any cell are rejected.
const MIN_DISTANCE_WAVELENGTHS: f64 = 1.0;

/// Below this pooled spread the √var chain rule is switched off: the variance
/// clamp at zero makes the square root non-differentiable there.
const SIGMA_GRAD_FLOOR: f64 = 1e-12;

const NM_PER_UM: f64 = 1e3;

/// Observation point above the surface; the aperture sits on y = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObsPoint {
    pub x_um: f64,
    pub y_um: f64,
}

/// A row of unit cells, contiguous at pitch = period and centered on x = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetasurfaceDesign {
    pub spec: UnitCellSpec,
    pub cells: Vec<ParamVector>,
}

impl MetasurfaceDesign {
    pub fn new(spec: UnitCellSpec, cells: Vec<ParamVector>) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::Validation(
                "a metasurface design needs at least one cell".into(),
            ));
        }
        for cell in &cells {
            cell.check(&spec)?;
        }
        Ok(Self { spec, cells })
    }

    /// Every cell width drawn uniformly within bounds.
    pub fn random(spec: &UnitCellSpec, n_cells: usize, seed: u64) -> Result<Self> {
        let mut rng = rng::stream(seed, "design-init", 0);
        let cells = (0..n_cells)
            .map(|_| {
                ParamVector::new(
                    (0..spec.layer_count)
                        .map(|_| rng.gen_range(spec.width_min_nm..=spec.width_max_nm))
                        .collect(),
                )
            })
            .collect();
        Self::new(spec.clone(), cells)
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// Cell-center x positions (µm), bottom-indexed cell first.
    pub fn cell_centers_um(&self) -> Vec<f64> {
        let pitch = self.spec.period_nm / NM_PER_UM;
        let mid = 0.5 * (self.cells.len() as f64 - 1.0);
        (0..self.cells.len())
            .map(|j| (j as f64 - mid) * pitch)
            .collect()
    }

    /// The same aperture traversed in the opposite direction.
    pub fn reversed(&self) -> Self {
        let mut cells = self.cells.clone();
        cells.reverse();
        Self {
            spec: self.spec.clone(),
            cells,
        }
    }
}

/// One focal point per design wavelength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocalSpec {
    points: [ObsPoint; 3],
}

impl FocalSpec {
    pub fn new(blue: ObsPoint, green: ObsPoint, red: ObsPoint) -> Result<Self> {
        for (p, f) in [blue, green, red].iter().zip(FrequencyId::ALL) {
            if !(p.y_um > 0.0 && p.y_um.is_finite() && p.x_um.is_finite()) {
                return Err(Error::Validation(format!(
                    "{} focal point ({}, {}) µm is not above the surface",
                    f.name(),
                    p.x_um,
                    p.y_um
                )));
            }
        }
        Ok(Self {
            points: [blue, green, red],
        })
    }

    /// Blue at (−10, 60) µm, Green at (0, 60) µm, Red at (+10, 60) µm.
    pub fn three_spot_default() -> Self {
        Self {
            points: [
                ObsPoint {
                    x_um: -10.0,
                    y_um: 60.0,
                },
                ObsPoint {
                    x_um: 0.0,
                    y_um: 60.0,
                },
                ObsPoint {
                    x_um: 10.0,
                    y_um: 60.0,
                },
            ],
        }
    }

    pub fn point(&self, f: FrequencyId) -> ObsPoint {
        self.points[f.index()]
    }

    /// The same spots with x negated (Blue and Red trade sides).
    pub fn mirrored(&self) -> Self {
        let flip = |p: ObsPoint| ObsPoint {
            x_um: -p.x_um,
            y_um: p.y_um,
        };
        Self {
            points: [
                flip(self.points[0]),
                flip(self.points[1]),
                flip(self.points[2]),
            ],
        }
    }
}

/// Intensity samples along a line parallel to the surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocalLine {
    pub xs_um: Vec<f64>,
    pub intensity: Vec<f64>,
}

/// Evenly spaced scan positions, inclusive of both ends.
pub fn line_xs(x_min_um: f64, x_max_um: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (x_min_um + x_max_um)];
    }
    let step = (x_max_um - x_min_um) / (n - 1) as f64;
    (0..n).map(|i| x_min_um + step * i as f64).collect()
}

/// Outgoing-wave kernel for one wavelength: `G = C·cosθ·e^{ikr}/√r`, with `C`
/// fixed so a uniform unit-amplitude aperture of the construction geometry
/// reaches intensity exactly 1 at its reference point (aperture axis at the
/// focal height).  All reported intensities are therefore relative to an
/// ideal flat aperture of the same size.
#[derive(Debug, Clone)]
pub struct GreensKernel {
    lambda_um: f64,
    k_um: f64,
    norm: f64,
}

impl GreensKernel {
    fn raw(k_um: f64, lambda_um: f64, obs: ObsPoint, src_x_um: f64) -> Result<Complex64> {
        if !(obs.y_um > 0.0) {
            return Err(Error::Bounds(format!(
                "observation at y = {} µm is not above the surface",
                obs.y_um
            )));
        }
        let r = (obs.x_um - src_x_um).hypot(obs.y_um);
        if r < MIN_DISTANCE_WAVELENGTHS * lambda_um {
            return Err(Error::Bounds(format!(
                "observation {r:.4} µm from a source cell is inside the kernel's \
                 far-field validity limit ({lambda_um} µm)"
            )));
        }
        let cos_theta = obs.y_um / r;
        Ok(Complex64::from_polar(cos_theta / r.sqrt(), k_um * r))
    }

    /// Build the normalized kernel for an aperture given by `centers_um` with
    /// cell measure `dx_um`, referenced at `ref_point`.
    pub fn normalized(
        wavelength_nm: f64,
        centers_um: &[f64],
        dx_um: f64,
        ref_point: ObsPoint,
    ) -> Result<Self> {
        let lambda_um = wavelength_nm / NM_PER_UM;
        let k_um = 2.0 * PI / lambda_um;
        let mut sum = Complex64::new(0.0, 0.0);
        for &x in centers_um {
            sum += Self::raw(k_um, lambda_um, ref_point, x)?;
        }
        let peak = sum.norm() * dx_um;
        if peak <= 0.0 || !peak.is_finite() {
            return Err(Error::Numeric(format!(
                "degenerate uniform-aperture reference amplitude {peak}"
            )));
        }
        Ok(Self {
            lambda_um,
            k_um,
            norm: 1.0 / peak,
        })
    }

    /// Normalized kernel entry for one observation/source pair.
    pub fn row(&self, obs: ObsPoint, src_x_um: f64) -> Result<Complex64> {
        Ok(self.norm * Self::raw(self.k_um, self.lambda_um, obs, src_x_um)?)
    }
}

/// Per-cell complex mean and spread entering the synthesis; validated label
/// tables carry zero spread.
#[derive(Debug, Clone, PartialEq)]
pub struct CellField {
    pub mu: Vec<Complex64>,
    pub sigma: Vec<Complex64>,
}

impl CellField {
    pub fn from_table(ts: &[Complex64]) -> Self {
        Self {
            mu: ts.to_vec(),
            sigma: vec![Complex64::new(0.0, 0.0); ts.len()],
        }
    }

    /// Pooled per-cell predictions at one frequency.
    pub fn from_surrogate(
        ensemble: &Ensemble,
        design: &MetasurfaceDesign,
        f: FrequencyId,
    ) -> Result<Self> {
        if ensemble.cell != design.spec {
            return Err(Error::Config(format!(
                "surrogate was trained on cell `{}`, design uses `{}`",
                ensemble.cell.variant_name, design.spec.variant_name
            )));
        }
        let mut mu = Vec::with_capacity(design.n_cells());
        let mut sigma = Vec::with_capacity(design.n_cells());
        for cell in &design.cells {
            let pred = ensemble.predict(cell, f)?;
            mu.push(pred.mean());
            sigma.push(pred.sigma());
        }
        Ok(Self { mu, sigma })
    }
}

/// Where per-cell transmissions come from during validation.
pub enum AmpSource<'a> {
    Surrogate(&'a Ensemble),
    /// Validated labels per frequency, indexed by [`FrequencyId::index`].
    Table(&'a [Vec<Complex64>; 3]),
}

impl AmpSource<'_> {
    fn cell_field(&self, design: &MetasurfaceDesign, f: FrequencyId) -> Result<CellField> {
        match self {
            AmpSource::Surrogate(ens) => CellField::from_surrogate(ens, design, f),
            AmpSource::Table(tables) => {
                let ts = &tables[f.index()];
                if ts.len() != design.n_cells() {
                    return Err(Error::Validation(format!(
                        "{} table amplitudes for {} cells",
                        ts.len(),
                        design.n_cells()
                    )));
                }
                Ok(CellField::from_table(ts))
            }
        }
    }
}

/// Synthesis context for one aperture: cell centers plus one normalized
/// kernel per frequency.
#[derive(Debug, Clone)]
pub struct FarField {
    pub centers_um: Vec<f64>,
    pub dx_um: f64,
    kernels: [GreensKernel; 3],
}

impl FarField {
    /// Kernels are normalized at each frequency's own focal height.
    pub fn for_aperture(centers_um: Vec<f64>, dx_um: f64, focal: &FocalSpec) -> Result<Self> {
        if centers_um.is_empty() {
            return Err(Error::Validation("empty aperture".into()));
        }
        let x_mid = centers_um.iter().sum::<f64>() / centers_um.len() as f64;
        let kernel_for = |f: FrequencyId| {
            GreensKernel::normalized(
                f.wavelength_nm(),
                &centers_um,
                dx_um,
                ObsPoint {
                    x_um: x_mid,
                    y_um: focal.point(f).y_um,
                },
            )
        };
        let kernels = [
            kernel_for(FrequencyId::Blue)?,
            kernel_for(FrequencyId::Green)?,
            kernel_for(FrequencyId::Red)?,
        ];
        Ok(Self {
            centers_um,
            dx_um,
            kernels,
        })
    }

    pub fn for_design(design: &MetasurfaceDesign, focal: &FocalSpec) -> Result<Self> {
        Self::for_aperture(
            design.cell_centers_um(),
            design.spec.period_nm / NM_PER_UM,
            focal,
        )
    }

    /// Normalized kernel entry at frequency `f`.
    pub fn greens_row(&self, f: FrequencyId, obs: ObsPoint, src_x_um: f64) -> Result<Complex64> {
        self.kernels[f.index()].row(obs, src_x_um)
    }

    /// `E(r) = Σ_cells G(r, x_cell)·(−t_cell)·Δx` per observation point.
    pub fn field_at(
        &self,
        f: FrequencyId,
        points: &[ObsPoint],
        amps: &[Complex64],
    ) -> Result<Vec<Complex64>> {
        if amps.len() != self.centers_um.len() {
            return Err(Error::Validation(format!(
                "{} amplitudes for {} cells",
                amps.len(),
                self.centers_um.len()
            )));
        }
        points
            .iter()
            .map(|&p| {
                let mut e = Complex64::new(0.0, 0.0);
                for (&x, &t) in self.centers_um.iter().zip(amps) {
                    e += self.greens_row(f, p, x)? * (-t);
                }
                Ok(e * self.dx_um)
            })
            .collect()
    }

    /// Ensemble-mean intensity `|ΣG·(−μ)Δx|² + |ΣG·σΔx|²` per point.
    pub fn expected_intensity(
        &self,
        f: FrequencyId,
        points: &[ObsPoint],
        field: &CellField,
    ) -> Result<Vec<f64>> {
        let mean = self.field_at(f, points, &field.mu)?;
        let spread = self.field_at(f, points, &field.sigma)?;
        Ok(mean
            .iter()
            .zip(&spread)
            .map(|(a, b)| a.norm_sqr() + b.norm_sqr())
            .collect())
    }
}

/// The three focal intensities and their minimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub worst_case: f64,
    pub per_wavelength: [f64; 3],
}

impl ObjectiveValue {
    fn from_per_wavelength(per_wavelength: [f64; 3]) -> Self {
        Self {
            worst_case: per_wavelength.iter().copied().fold(f64::INFINITY, f64::min),
            per_wavelength,
        }
    }
}

/// Focal intensities from explicit per-frequency cell fields.
pub fn objective_from_fields(
    ff: &FarField,
    focal: &FocalSpec,
    fields: &[CellField; 3],
) -> Result<ObjectiveValue> {
    let mut per = [0.0; 3];
    for f in FrequencyId::ALL {
        per[f.index()] =
            ff.expected_intensity(f, &[focal.point(f)], &fields[f.index()])?[0];
    }
    Ok(ObjectiveValue::from_per_wavelength(per))
}

/// Focal intensities under the surrogate.
pub fn objective(
    design: &MetasurfaceDesign,
    ensemble: &Ensemble,
    focal: &FocalSpec,
) -> Result<ObjectiveValue> {
    let ff = FarField::for_design(design, focal)?;
    let fields = [
        CellField::from_surrogate(ensemble, design, FrequencyId::Blue)?,
        CellField::from_surrogate(ensemble, design, FrequencyId::Green)?,
        CellField::from_surrogate(ensemble, design, FrequencyId::Red)?,
    ];
    objective_from_fields(&ff, focal, &fields)
}

/// `softmin_β(I) = −(1/β)·ln Σ_f e^{−β·I_f}`; approaches the hard minimum
/// from below as β grows.
pub fn softmin(values: &[f64; 3], beta: f64) -> f64 {
    let m = values.iter().copied().fold(f64::INFINITY, f64::min);
    let sum: f64 = values.iter().map(|&v| (-beta * (v - m)).exp()).sum();
    m - sum.ln() / beta
}

/// Soft objective value with its gradient over all N×10 normalized widths
/// (row-major by cell).
#[derive(Debug, Clone)]
pub struct SoftObjective {
    pub value: f64,
    pub hard: ObjectiveValue,
    pub grad: Vec<f64>,
}

/// Per-frequency focal intensities and their gradients; the soft-min weights
/// combine these.
fn per_frequency_gradients(
    design: &MetasurfaceDesign,
    ensemble: &Ensemble,
    ff: &FarField,
    focal: &FocalSpec,
) -> Result<(ObjectiveValue, [Vec<f64>; 3])> {
    if ensemble.cell != design.spec {
        return Err(Error::Config(format!(
            "surrogate was trained on cell `{}`, design uses `{}`",
            ensemble.cell.variant_name, design.spec.variant_name
        )));
    }
    let n = design.n_cells();
    let dx = ff.dx_um;
    let mut per = [0.0; 3];
    let mut grads = [
        vec![0.0; n * NETWORK_WIDTHS],
        vec![0.0; n * NETWORK_WIDTHS],
        vec![0.0; n * NETWORK_WIDTHS],
    ];
    for f in FrequencyId::ALL {
        let obs = focal.point(f);
        let mut rows = Vec::with_capacity(n);
        let mut preds = Vec::with_capacity(n);
        let mut pred_grads = Vec::with_capacity(n);
        let mut a = Complex64::new(0.0, 0.0);
        let mut b = Complex64::new(0.0, 0.0);
        for (cell, &x) in design.cells.iter().zip(&ff.centers_um) {
            let g = ff.greens_row(f, obs, x)? * dx;
            let input = encode_input(cell, f, &design.spec)?;
            let (pred, grad) = ensemble.predict_with_gradient(&input)?;
            a += g * (-pred.mean());
            b += g * pred.sigma();
            rows.push(g);
            preds.push(pred);
            pred_grads.push(grad);
        }
        per[f.index()] = a.norm_sqr() + b.norm_sqr();
        let out = &mut grads[f.index()];
        for j in 0..n {
            let ca = a.conj() * rows[j];
            let cb = b.conj() * rows[j];
            let sig = preds[j].sigma();
            let pg = &pred_grads[j];
            for c in 0..NETWORK_WIDTHS {
                // d|A|²: A is linear in μ with weight −g; d|B|²: B carries +g
                // on σ = √var, so dσ/dx = dvar/(2σ) away from the clamp.
                let mut d = -2.0 * ca.re * pg.dmu_re[c] + 2.0 * ca.im * pg.dmu_im[c];
                if sig.re > SIGMA_GRAD_FLOOR {
                    d += 2.0 * cb.re * pg.dvar_re[c] / (2.0 * sig.re);
                }
                if sig.im > SIGMA_GRAD_FLOOR {
                    d += -2.0 * cb.im * pg.dvar_im[c] / (2.0 * sig.im);
                }
                out[j * NETWORK_WIDTHS + c] += d;
            }
        }
    }
    Ok((ObjectiveValue::from_per_wavelength(per), grads))
}

/// Gradient of the soft worst case at sharpness `beta`.
pub fn gradient(
    design: &MetasurfaceDesign,
    ensemble: &Ensemble,
    focal: &FocalSpec,
    beta: f64,
) -> Result<SoftObjective> {
    let ff = FarField::for_design(design, focal)?;
    let (hard, per_grads) = per_frequency_gradients(design, ensemble, &ff, focal)?;
    let m = hard.worst_case;
    let weights: Vec<f64> = hard
        .per_wavelength
        .iter()
        .map(|&v| (-beta * (v - m)).exp())
        .collect();
    let wsum: f64 = weights.iter().sum();
    let mut grad = vec![0.0; design.n_cells() * NETWORK_WIDTHS];
    for (w, g) in weights.iter().zip(&per_grads) {
        let w = w / wsum;
        if w == 0.0 {
            continue;
        }
        for (o, &gi) in grad.iter_mut().zip(g) {
            *o += w * gi;
        }
    }
    Ok(SoftObjective {
        value: softmin(&hard.per_wavelength, beta),
        hard,
        grad,
    })
}

/// How iterates return to the feasible box after a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProjectionMode {
    /// Clamp every normalized coordinate into [−1, 1].
    Clamp,
}

/// Projected-ascent settings for the soft worst-case objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignOptConfig {
    /// Adam base step in normalized-width coordinates.
    pub step: f64,
    pub iterations: usize,
    /// Soft-min sharpness anneals geometrically from `beta_start` to
    /// `beta_end` across the run.
    pub beta_start: f64,
    pub beta_end: f64,
    pub seed: u64,
    pub projection: ProjectionMode,
}

impl Default for DesignOptConfig {
    fn default() -> Self {
        Self {
            step: 0.02,
            iterations: 200,
            beta_start: 10.0,
            beta_end: 1e3,
            seed: 0,
            projection: ProjectionMode::Clamp,
        }
    }
}

impl DesignOptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Config(format!("step {} must be positive", self.step)));
        }
        if !(self.beta_start > 0.0 && self.beta_end >= self.beta_start) {
            return Err(Error::Config(format!(
                "sharpness schedule {} → {} must rise from a positive start",
                self.beta_start, self.beta_end
            )));
        }
        Ok(())
    }

    /// Geometric sharpness at iteration `it` of `self.iterations`.
    fn beta_at(&self, it: usize) -> f64 {
        if self.iterations <= 1 {
            return self.beta_start;
        }
        let frac = it as f64 / (self.iterations - 1) as f64;
        self.beta_start * (self.beta_end / self.beta_start).powf(frac.min(1.0))
    }
}

/// One optimization trace record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub worst_case: f64,
    pub i_blue: f64,
    pub i_green: f64,
    pub i_red: f64,
    pub beta: f64,
}

impl TraceRow {
    fn new(iter: usize, v: &ObjectiveValue, beta: f64) -> Self {
        Self {
            iter,
            worst_case: v.worst_case,
            i_blue: v.per_wavelength[0],
            i_green: v.per_wavelength[1],
            i_red: v.per_wavelength[2],
            beta,
        }
    }
}

/// The best design seen, its trace, and the endpoint objectives.
#[derive(Debug, Clone)]
pub struct OptimizationOutcome {
    pub design: MetasurfaceDesign,
    pub trace: Vec<TraceRow>,
    pub initial: ObjectiveValue,
    pub best: ObjectiveValue,
}

/// Projected Adam ascent on the soft worst case; returns the best iterate by
/// the hard minimum, so the outcome never falls below the starting design.
pub fn optimize(
    design0: &MetasurfaceDesign,
    ensemble: &Ensemble,
    focal: &FocalSpec,
    cfg: &DesignOptConfig,
) -> Result<OptimizationOutcome> {
    cfg.validate()?;
    let spec = &design0.spec;
    let n = design0.n_cells();
    let dims = n * NETWORK_WIDTHS;
    let mut x = Vec::with_capacity(dims);
    for cell in &design0.cells {
        x.extend(normalize(cell, spec)?);
    }
    let design_at = |x: &[f64]| -> Result<MetasurfaceDesign> {
        let cells = x
            .chunks(NETWORK_WIDTHS)
            .map(|c| denormalize(c, spec))
            .collect::<Result<Vec<_>>>()?;
        MetasurfaceDesign::new(spec.clone(), cells)
    };

    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    let mut m = vec![0.0; dims];
    let mut v = vec![0.0; dims];
    let mut best_x: Option<Vec<f64>> = None;
    let mut initial = None;
    let mut best = None;

    for it in 0..=cfg.iterations {
        let beta = cfg.beta_at(it);
        let current = design_at(&x)?;
        let (hard, grad) = if it < cfg.iterations {
            let so = gradient(&current, ensemble, focal, beta)?;
            (so.hard, Some(so.grad))
        } else {
            (objective(&current, ensemble, focal)?, None)
        };
        if !hard.worst_case.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite objective at iteration {it} (worst case {}; {} trace rows kept)",
                hard.worst_case,
                trace.len()
            )));
        }
        trace.push(TraceRow::new(it, &hard, beta));
        if initial.is_none() {
            initial = Some(hard);
        }
        if best.is_none_or(|b: ObjectiveValue| hard.worst_case > b.worst_case) {
            best = Some(hard);
            best_x = Some(x.clone());
        }
        let Some(grad) = grad else { break };

        let t = (it + 1) as f64;
        for k in 0..dims {
            m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * grad[k];
            v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * grad[k] * grad[k];
            let m_hat = m[k] / (1.0 - ADAM_BETA1.powf(t));
            let v_hat = v[k] / (1.0 - ADAM_BETA2.powf(t));
            x[k] += cfg.step * m_hat / (v_hat.sqrt() + ADAM_EPS);
            match cfg.projection {
                ProjectionMode::Clamp => x[k] = x[k].clamp(-1.0, 1.0),
            }
        }
        debug_assert!(x.iter().all(|&xi| (-1.0..=1.0).contains(&xi)));
    }

    let initial = initial.expect("at least one evaluation");
    let best = best.expect("at least one evaluation");
    // Return design0 verbatim when nothing improved on it, so a zero-iteration
    // run is exactly the identity (normalize/denormalize round-trips can move
    // widths by one ulp).
    let design = if best.worst_case > initial.worst_case {
        design_at(&best_x.expect("tracked alongside best"))?
    } else {
        design0.clone()
    };
    Ok(OptimizationOutcome {
        design,
        trace,
        initial,
        best,
    })
}

/// Write an optimization trace as CSV.
pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a trace written by [`write_trace`].
pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let mut rows = Vec::new();
    for rec in r.deserialize::<TraceRow>() {
        rows.push(rec?);
    }
    Ok(rows)
}

/// Surrogate-predicted vs. solver-validated focal lines.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub xs_um: Vec<f64>,
    /// Expected intensity under the amplitude source, per frequency.
    pub predicted: [FocalLine; 3],
    /// `|E|²` from per-cell solver labels, per frequency.
    pub validated: [FocalLine; 3],
    /// Relative L2 discrepancy between the two lines, per frequency.
    pub rel_l2: [f64; 3],
    /// Validated per-cell transmissions, per frequency.
    pub labels: [Vec<Complex64>; 3],
    pub solver_seconds: f64,
}

fn relative_l2(a: &[f64], b: &[f64]) -> Result<f64> {
    let num: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if den == 0.0 {
        return if num == 0.0 {
            Ok(0.0)
        } else {
            Err(Error::Numeric(
                "validated focal line is identically zero".into(),
            ))
        };
    }
    Ok(num / den)
}

fn label_cells(
    design: &MetasurfaceDesign,
    f: FrequencyId,
    dx_nm: f64,
    jobs: usize,
) -> Result<Vec<Complex64>> {
    let work = |cell: &ParamVector| fdfd::label(&design.spec, cell, f, dx_nm).map(|r| r.t);
    if jobs > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| design.cells.par_iter().map(work).collect())
    } else {
        design.cells.iter().map(work).collect()
    }
}

/// Label every cell with the direct solver at each frequency and compare the
/// synthesized focal lines against the amplitude source's prediction along
/// `xs_um` at each frequency's focal height.
pub fn validate(
    design: &MetasurfaceDesign,
    source: &AmpSource,
    focal: &FocalSpec,
    xs_um: &[f64],
    dx_nm: f64,
    jobs: usize,
) -> Result<ValidationReport> {
    if xs_um.is_empty() {
        return Err(Error::Validation("empty focal-line scan".into()));
    }
    let ff = FarField::for_design(design, focal)?;
    let start = Instant::now();
    let mut predicted = Vec::with_capacity(3);
    let mut validated = Vec::with_capacity(3);
    let mut rel = [0.0; 3];
    let mut labels = Vec::with_capacity(3);
    for f in FrequencyId::ALL {
        let points: Vec<ObsPoint> = xs_um
            .iter()
            .map(|&x| ObsPoint {
                x_um: x,
                y_um: focal.point(f).y_um,
            })
            .collect();
        let field = source.cell_field(design, f)?;
        let pred = ff.expected_intensity(f, &points, &field)?;
        let ts = label_cells(design, f, dx_nm, jobs)?;
        let direct: Vec<f64> = ff
            .field_at(f, &points, &ts)?
            .iter()
            .map(|e| e.norm_sqr())
            .collect();
        rel[f.index()] = relative_l2(&pred, &direct)?;
        predicted.push(FocalLine {
            xs_um: xs_um.to_vec(),
            intensity: pred,
        });
        validated.push(FocalLine {
            xs_um: xs_um.to_vec(),
            intensity: direct,
        });
        labels.push(ts);
    }
    Ok(ValidationReport {
        xs_um: xs_um.to_vec(),
        predicted: predicted.try_into().expect("three frequencies"),
        validated: validated.try_into().expect("three frequencies"),
        rel_l2: rel,
        labels: labels.try_into().expect("three frequencies"),
        solver_seconds: start.elapsed().as_secs_f64(),
    })
}

/// On-disk design bundle: spec echo travels inside the design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignFile {
    pub design: MetasurfaceDesign,
    pub focal: FocalSpec,
}

pub fn save_design(path: &Path, file: &DesignFile) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(file)?)?;
    Ok(())
}

pub fn load_design(path: &Path) -> Result<DesignFile> {
    let text = std::fs::read_to_string(path)?;
    let file: DesignFile = serde_json::from_str(&text)?;
    MetasurfaceDesign::new(file.design.spec.clone(), file.design.cells.clone())?;
    FocalSpec::new(
        file.focal.point(FrequencyId::Blue),
        file.focal.point(FrequencyId::Green),
        file.focal.point(FrequencyId::Red),
    )?;
    Ok(file)
}
