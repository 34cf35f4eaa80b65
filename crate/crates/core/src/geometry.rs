//! Parameterized unit-cell families and the network input encoding.
//!
//! A unit cell is a slab of substrate containing a vertical stack of
//! rectangular air holes, one hole per layer, repeated periodically in `x`.
//! The free parameters are the hole widths; heights, spacing, and materials
//! are fixed per cell family. Three named presets (`normal`, `small`,
//! `smallest`) cover the cells studied here; a general constructor allows
//! arbitrary dimensions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of geometry inputs consumed by the surrogate network.
pub const NETWORK_WIDTHS: usize = 10;
/// Total network input size: widths plus the frequency one-hot.
pub const NETWORK_INPUTS: usize = NETWORK_WIDTHS + 3;

/// Fixed dimensions and materials of one unit-cell family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitCellSpec {
    /// Lateral period of the cell (nm).
    pub period_nm: f64,
    /// Number of hole layers (10 for all presets).
    pub layer_count: usize,
    /// Height of each hole (nm).
    pub hole_height_nm: f64,
    /// Substrate thickness between consecutive holes (nm).
    pub spacer_height_nm: f64,
    /// Lower bound on hole width (nm).
    pub width_min_nm: f64,
    /// Upper bound on hole width (nm).
    pub width_max_nm: f64,
    /// Substrate refractive index.
    pub n_substrate: f64,
    /// Hole refractive index.
    pub n_hole: f64,
    /// Background (superstrate) refractive index.
    pub n_background: f64,
    /// Preset label or free-form name.
    pub variant_name: String,
}

impl UnitCellSpec {
    /// General constructor; validates the family invariants.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        period_nm: f64,
        layer_count: usize,
        hole_height_nm: f64,
        spacer_height_nm: f64,
        width_min_nm: f64,
        width_max_nm: f64,
        n_substrate: f64,
        n_hole: f64,
        n_background: f64,
        variant_name: impl Into<String>,
    ) -> Result<Self> {
        let spec = Self {
            period_nm,
            layer_count,
            hole_height_nm,
            spacer_height_nm,
            width_min_nm,
            width_max_nm,
            n_substrate,
            n_hole,
            n_background,
            variant_name: variant_name.into(),
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if !(self.period_nm > 0.0 && self.hole_height_nm > 0.0 && self.spacer_height_nm >= 0.0) {
            return Err(Error::Config(format!(
                "unit cell `{}` has nonpositive dimensions",
                self.variant_name
            )));
        }
        if self.layer_count == 0 {
            return Err(Error::Config("layer_count must be at least 1".into()));
        }
        if !(0.0 < self.width_min_nm && self.width_min_nm < self.width_max_nm) {
            return Err(Error::Config(format!(
                "width bounds must satisfy 0 < min < max, got [{}, {}]",
                self.width_min_nm, self.width_max_nm
            )));
        }
        if self.width_max_nm > self.period_nm {
            return Err(Error::Config(format!(
                "width_max {} nm exceeds period {} nm",
                self.width_max_nm, self.period_nm
            )));
        }
        for (name, n) in [
            ("n_substrate", self.n_substrate),
            ("n_hole", self.n_hole),
            ("n_background", self.n_background),
        ] {
            if !(n >= 1.0) {
                return Err(Error::Config(format!("{name} must be >= 1, got {n}")));
            }
        }
        Ok(())
    }

    /// The main study cell: 400 nm period, ten 304 nm holes separated by
    /// 140 nm of silica, widths 60–340 nm.
    pub fn normal() -> Self {
        Self {
            period_nm: 400.0,
            layer_count: 10,
            hole_height_nm: 304.0,
            spacer_height_nm: 140.0,
            width_min_nm: 60.0,
            width_max_nm: 340.0,
            n_substrate: 1.45,
            n_hole: 1.0,
            n_background: 1.0,
            variant_name: "normal".into(),
        }
    }

    /// Vertically compressed variant: 61 nm holes with no separation.
    pub fn small() -> Self {
        Self {
            hole_height_nm: 61.0,
            spacer_height_nm: 0.0,
            variant_name: "small".into(),
            ..Self::normal()
        }
    }

    /// The small cell shrunk 10x in every length: 40 nm period, 6.1 nm
    /// holes, widths 6–34 nm.
    pub fn smallest() -> Self {
        let mut spec = Self::small()
            .scaled(0.1)
            .expect("preset scaling is valid");
        spec.variant_name = "smallest".into();
        spec
    }

    /// Look up a preset by name.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "normal" => Some(Self::normal()),
            "small" => Some(Self::small()),
            "smallest" => Some(Self::smallest()),
            _ => None,
        }
    }

    /// Scale every length by `factor`; indices and layer count unchanged.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0) {
            return Err(Error::Config(format!(
                "scale factor must be positive, got {factor}"
            )));
        }
        Ok(Self {
            period_nm: self.period_nm * factor,
            hole_height_nm: self.hole_height_nm * factor,
            spacer_height_nm: self.spacer_height_nm * factor,
            width_min_nm: self.width_min_nm * factor,
            width_max_nm: self.width_max_nm * factor,
            variant_name: self.variant_name.clone(),
            ..self.clone()
        })
    }

    /// Total height of the hole stack (nm): holes plus interior spacers.
    pub fn structure_height_nm(&self) -> f64 {
        self.layer_count as f64 * self.hole_height_nm
            + (self.layer_count - 1) as f64 * self.spacer_height_nm
    }

    /// Check one width against the bounds.
    pub fn check_width(&self, width_nm: f64) -> Result<()> {
        if width_nm.is_finite()
            && width_nm >= self.width_min_nm
            && width_nm <= self.width_max_nm
        {
            Ok(())
        } else {
            Err(Error::Bounds(format!(
                "width {width_nm} nm outside [{}, {}] nm of cell `{}`",
                self.width_min_nm, self.width_max_nm, self.variant_name
            )))
        }
    }
}

/// Hole widths of one unit cell, in nm, bottom layer first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub widths_nm: Vec<f64>,
}

impl ParamVector {
    pub fn new(widths_nm: Vec<f64>) -> Self {
        Self { widths_nm }
    }

    /// All widths equal to `w` for the given cell family.
    pub fn uniform(spec: &UnitCellSpec, w: f64) -> Self {
        Self {
            widths_nm: vec![w; spec.layer_count],
        }
    }

    /// All widths at the midpoint of the bounds.
    pub fn midpoint(spec: &UnitCellSpec) -> Self {
        Self::uniform(spec, 0.5 * (spec.width_min_nm + spec.width_max_nm))
    }

    pub fn len(&self) -> usize {
        self.widths_nm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.widths_nm.is_empty()
    }

    /// Validate every width against the owning spec.
    pub fn check(&self, spec: &UnitCellSpec) -> Result<()> {
        if self.widths_nm.len() != spec.layer_count {
            return Err(Error::Bounds(format!(
                "expected {} widths for cell `{}`, got {}",
                spec.layer_count,
                spec.variant_name,
                self.widths_nm.len()
            )));
        }
        for &w in &self.widths_nm {
            spec.check_width(w)?;
        }
        Ok(())
    }
}

/// The three design wavelengths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrequencyId {
    Blue,
    Green,
    Red,
}

impl FrequencyId {
    pub const ALL: [FrequencyId; 3] = [Self::Blue, Self::Green, Self::Red];

    pub fn wavelength_nm(self) -> f64 {
        match self {
            Self::Blue => 405.0,
            Self::Green => 540.0,
            Self::Red => 810.0,
        }
    }

    /// Index into the one-hot block (Blue, Green, Red).
    pub fn index(self) -> usize {
        match self {
            Self::Blue => 0,
            Self::Green => 1,
            Self::Red => 2,
        }
    }

    pub fn one_hot(self) -> [f64; 3] {
        let mut v = [0.0; 3];
        v[self.index()] = 1.0;
        v
    }

    /// Inverse of `wavelength_nm`, used when reading datasets.
    pub fn from_wavelength_nm(wavelength_nm: f64) -> Result<Self> {
        for f in Self::ALL {
            if (f.wavelength_nm() - wavelength_nm).abs() < 1e-6 {
                return Ok(f);
            }
        }
        Err(Error::Config(format!(
            "wavelength {wavelength_nm} nm is not one of the design wavelengths"
        )))
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Blue => "blue",
            Self::Green => "green",
            Self::Red => "red",
        }
    }
}

/// The 13-entry surrogate input: 10 normalized widths in `[-1, 1]` followed
/// by the frequency one-hot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkInput(pub [f64; NETWORK_INPUTS]);

impl NetworkInput {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Affine map of widths onto `[-1, 1]`: bounds map to the endpoints.
pub fn normalize(p: &ParamVector, spec: &UnitCellSpec) -> Result<Vec<f64>> {
    p.check(spec)?;
    let half_range = 0.5 * (spec.width_max_nm - spec.width_min_nm);
    Ok(p.widths_nm
        .iter()
        .map(|&w| (w - spec.width_min_nm) / half_range - 1.0)
        .collect())
}

/// Inverse of [`normalize`].
pub fn denormalize(x: &[f64], spec: &UnitCellSpec) -> Result<ParamVector> {
    if x.len() != spec.layer_count {
        return Err(Error::Bounds(format!(
            "expected {} normalized coordinates, got {}",
            spec.layer_count,
            x.len()
        )));
    }
    let half_range = 0.5 * (spec.width_max_nm - spec.width_min_nm);
    let mut widths = Vec::with_capacity(x.len());
    for &xi in x {
        if !(-1.0..=1.0).contains(&xi) {
            return Err(Error::Bounds(format!(
                "normalized coordinate {xi} outside [-1, 1]"
            )));
        }
        widths.push(spec.width_min_nm + (xi + 1.0) * half_range);
    }
    Ok(ParamVector::new(widths))
}

/// Concatenate normalized widths with the frequency one-hot.
pub fn encode_input(p: &ParamVector, f: FrequencyId, spec: &UnitCellSpec) -> Result<NetworkInput> {
    let widths = normalize(p, spec)?;
    if widths.len() != NETWORK_WIDTHS {
        return Err(Error::Config(format!(
            "network encoding requires {NETWORK_WIDTHS} widths, cell `{}` has {}",
            spec.variant_name, widths.len()
        )));
    }
    let mut out = [0.0; NETWORK_INPUTS];
    out[..NETWORK_WIDTHS].copy_from_slice(&widths);
    out[NETWORK_WIDTHS..].copy_from_slice(&f.one_hot());
    Ok(NetworkInput(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn presets_match_published_dimensions() {
        let normal = UnitCellSpec::normal();
        assert_eq!(normal.period_nm, 400.0);
        assert_eq!(normal.hole_height_nm, 304.0);
        assert_eq!(normal.spacer_height_nm, 140.0);
        assert_eq!((normal.width_min_nm, normal.width_max_nm), (60.0, 340.0));
        assert_eq!(normal.n_substrate, 1.45);
        assert_eq!(normal.layer_count, 10);

        let small = UnitCellSpec::small();
        assert_eq!(small.hole_height_nm, 61.0);
        assert_eq!(small.spacer_height_nm, 0.0);
        assert_eq!(small.period_nm, 400.0);

        let smallest = UnitCellSpec::smallest();
        assert!((smallest.period_nm - 40.0).abs() < 1e-12);
        assert!((smallest.hole_height_nm - 6.1).abs() < 1e-12);
        assert!((smallest.width_min_nm - 6.0).abs() < 1e-12);
        assert!((smallest.width_max_nm - 34.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_endpoints_and_midpoint() {
        let spec = UnitCellSpec::normal();
        let lo = normalize(&ParamVector::uniform(&spec, 60.0), &spec).unwrap();
        let hi = normalize(&ParamVector::uniform(&spec, 340.0), &spec).unwrap();
        let mid = normalize(&ParamVector::uniform(&spec, 200.0), &spec).unwrap();
        assert!(lo.iter().all(|&v| v == -1.0));
        assert!(hi.iter().all(|&v| v == 1.0));
        assert!(mid.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalize_rejects_out_of_bounds() {
        let spec = UnitCellSpec::normal();
        let p = ParamVector::uniform(&spec, 59.9);
        assert!(matches!(normalize(&p, &spec), Err(Error::Bounds(_))));
        let p = ParamVector::uniform(&spec, 340.1);
        assert!(matches!(normalize(&p, &spec), Err(Error::Bounds(_))));
    }

    #[test]
    fn normalize_denormalize_roundtrip() {
        let spec = UnitCellSpec::normal();
        let mut rng = crate::rng::stream(42, "geometry-roundtrip", 0);
        for _ in 0..1000 {
            let widths: Vec<f64> = (0..spec.layer_count)
                .map(|_| rng.gen_range(spec.width_min_nm..=spec.width_max_nm))
                .collect();
            let p = ParamVector::new(widths);
            let x = normalize(&p, &spec).unwrap();
            let back = denormalize(&x, &spec).unwrap();
            for (a, b) in p.widths_nm.iter().zip(&back.widths_nm) {
                assert!((a - b).abs() <= 1e-12 * spec.width_max_nm);
            }
        }
    }

    #[test]
    fn encode_input_examples() {
        let spec = UnitCellSpec::normal();
        let mid = ParamVector::uniform(&spec, 200.0);
        let x = encode_input(&mid, FrequencyId::Blue, &spec).unwrap();
        assert_eq!(&x.0[..10], &[0.0; 10]);
        assert_eq!(&x.0[10..], &[1.0, 0.0, 0.0]);

        let lo = ParamVector::uniform(&spec, 60.0);
        let x = encode_input(&lo, FrequencyId::Red, &spec).unwrap();
        assert_eq!(&x.0[..10], &[-1.0; 10]);
        assert_eq!(&x.0[10..], &[0.0, 0.0, 1.0]);

        let mut widths = vec![60.0; 10];
        widths[1] = 340.0;
        let x = encode_input(&ParamVector::new(widths), FrequencyId::Green, &spec).unwrap();
        assert_eq!(x.0[0], -1.0);
        assert_eq!(x.0[1], 1.0);
        assert_eq!(&x.0[10..], &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn one_hot_has_exactly_one_entry_set() {
        for f in FrequencyId::ALL {
            let oh = f.one_hot();
            assert_eq!(oh.iter().sum::<f64>(), 1.0);
            assert_eq!(oh.iter().filter(|&&v| v == 1.0).count(), 1);
        }
    }

    #[test]
    fn scaling_small_by_tenth_gives_smallest() {
        let scaled = UnitCellSpec::small().scaled(0.1).unwrap();
        let smallest = UnitCellSpec::smallest();
        assert!((scaled.period_nm - smallest.period_nm).abs() < 1e-12);
        assert!((scaled.hole_height_nm - smallest.hole_height_nm).abs() < 1e-12);
        assert!((scaled.spacer_height_nm - smallest.spacer_height_nm).abs() < 1e-12);
        assert!((scaled.width_min_nm - smallest.width_min_nm).abs() < 1e-12);
    }

    #[test]
    fn scaling_composes_multiplicatively() {
        let spec = UnitCellSpec::normal();
        let a = spec.scaled(0.5).unwrap().scaled(4.0).unwrap();
        let b = spec.scaled(2.0).unwrap();
        assert!((a.period_nm - b.period_nm).abs() < 1e-12);
        assert!((a.hole_height_nm - b.hole_height_nm).abs() < 1e-12);
        assert!((a.width_max_nm - b.width_max_nm).abs() < 1e-12);
    }

    #[test]
    fn scaling_identity_and_errors() {
        let spec = UnitCellSpec::normal();
        let same = spec.scaled(1.0).unwrap();
        assert_eq!(same, spec);
        assert!(spec.scaled(0.0).is_err());
        assert!(spec.scaled(-1.0).is_err());
        assert!((spec.scaled(2.0).unwrap().period_nm - 800.0).abs() < 1e-12);
    }

    #[test]
    fn structure_height_of_presets() {
        assert_eq!(UnitCellSpec::normal().structure_height_nm(), 4300.0);
        assert_eq!(UnitCellSpec::small().structure_height_nm(), 610.0);
        assert!((UnitCellSpec::smallest().structure_height_nm() - 61.0).abs() < 1e-12);
    }
}
