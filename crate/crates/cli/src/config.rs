//! Run configuration: one JSON document drives every subcommand.
//!
//! Every field has a default, so a missing or partial config file is valid;
//! unknown keys are rejected so typos cannot silently fall back. The
//! effective config (after `--seed` overrides) is echoed into each output
//! directory, and rerunning from that echo at `--jobs 1` reproduces the run
//! byte for byte.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use metasurf::active_learning::{
    ALConfig, AnalyticSynthetic, FdfdOracle, KSchedule, Oracle, TransferMatrixSynthetic,
};
use metasurf::error::{Error, Result};
use metasurf::fdfd;
use metasurf::geometry::UnitCellSpec;
use metasurf::metaopt::{DesignOptConfig, FocalSpec, ObsPoint, ProjectionMode, DEFAULT_CELL_COUNT};
use metasurf::nnet::{MlpConfig, TrainConfig};
use metasurf::surrogate::EnsembleConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// Which labeler backs `gen-data`, the run pipelines, and `bench`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum OracleKind {
    Fdfd,
    TransferMatrixSynthetic,
    AnalyticSynthetic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnitCellSection {
    /// Preset name: `normal`, `small`, or `smallest`.
    pub preset: String,
}

impl Default for UnitCellSection {
    fn default() -> Self {
        Self {
            preset: "normal".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    /// Solver pixel size; `null` picks the preset's default resolution.
    pub dx_nm: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub kind: OracleKind,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            kind: OracleKind::AnalyticSynthetic,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSection {
    /// Members per output part (J); 2J networks total.
    pub members_per_part: usize,
    pub hidden: Vec<usize>,
    pub tanh_scale: f64,
    pub sigma_floor: f64,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self {
            members_per_part: 5,
            hidden: vec![32, 32],
            tanh_scale: 2.0,
            sigma_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Epochs per active-learning round (warm-started, so rounds stay short
    /// and ensemble members keep their diversity).
    pub epochs: usize,
    /// Epochs for the single cold fit of a baseline run.
    pub baseline_epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub decay: f64,
    pub decay_start_epoch: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: 100,
            baseline_epochs: 400,
            batch_size: 32,
            lr0: t.lr0,
            decay: t.decay,
            decay_start_epoch: t.decay_start_epoch,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlSection {
    pub n_init: usize,
    pub m_factor: usize,
    pub k_schedule: KSchedule,
    pub t_iters: usize,
    pub test_size: usize,
}

impl Default for AlSection {
    fn default() -> Self {
        Self {
            n_init: 200,
            m_factor: 4,
            k_schedule: KSchedule::Doubling { start: 100 },
            t_iters: 6,
            test_size: 500,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChebyshevSection {
    /// Nodes per axis.
    pub n: usize,
    /// Active width dimensions; the remaining widths sit at the midpoint.
    pub d: usize,
}

impl Default for ChebyshevSection {
    fn default() -> Self {
        Self { n: 3, d: 4 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignSection {
    pub n_cells: usize,
    /// Adam step in normalized-width coordinates.
    pub step: f64,
    pub iterations: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub focal_blue_um: [f64; 2],
    pub focal_green_um: [f64; 2],
    pub focal_red_um: [f64; 2],
    pub line_x_min_um: f64,
    pub line_x_max_um: f64,
    pub line_samples: usize,
}

impl Default for DesignSection {
    fn default() -> Self {
        Self {
            n_cells: DEFAULT_CELL_COUNT,
            step: 0.05,
            iterations: 200,
            beta_start: 10.0,
            beta_end: 1e3,
            focal_blue_um: [-10.0, 60.0],
            focal_green_um: [0.0, 60.0],
            focal_red_um: [10.0, 60.0],
            line_x_min_um: -20.0,
            line_x_max_um: 20.0,
            line_samples: 81,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub unit_cell: UnitCellSection,
    pub grid: GridSection,
    pub oracle: OracleSection,
    pub ensemble: EnsembleSection,
    pub train: TrainSection,
    pub al: AlSection,
    pub chebyshev: ChebyshevSection,
    pub design: DesignSection,
    pub output_dir: PathBuf,
    pub master_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            unit_cell: UnitCellSection::default(),
            grid: GridSection::default(),
            oracle: OracleSection::default(),
            ensemble: EnsembleSection::default(),
            train: TrainSection::default(),
            al: AlSection::default(),
            chebyshev: ChebyshevSection::default(),
            design: DesignSection::default(),
            output_dir: PathBuf::from("runs"),
            master_seed: 0,
        }
    }
}

impl RunConfig {
    /// Defaults when `path` is `None`, otherwise the parsed file.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg: Self = match path {
            None => Self::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("config {}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("config {}: {e}", p.display())))?
            }
        };
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "config schema version {} (this build reads {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn spec(&self) -> Result<UnitCellSpec> {
        UnitCellSpec::preset(&self.unit_cell.preset).ok_or_else(|| {
            Error::Config(format!(
                "unknown unit-cell preset {:?} (expected normal, small, or smallest)",
                self.unit_cell.preset
            ))
        })
    }

    pub fn dx_nm(&self, spec: &UnitCellSpec) -> f64 {
        self.grid.dx_nm.unwrap_or_else(|| fdfd::default_dx(spec))
    }

    pub fn oracle(&self, spec: &UnitCellSpec, kind: Option<OracleKind>) -> Result<Box<dyn Oracle>> {
        Ok(match kind.unwrap_or(self.oracle.kind) {
            OracleKind::Fdfd => Box::new(FdfdOracle::new(spec.clone(), self.dx_nm(spec))?),
            OracleKind::TransferMatrixSynthetic => {
                Box::new(TransferMatrixSynthetic::new(spec.clone()))
            }
            OracleKind::AnalyticSynthetic => Box::new(AnalyticSynthetic::new(spec.clone())),
        })
    }

    pub fn al_config(&self, master_seed: u64) -> ALConfig {
        ALConfig {
            n_init: self.al.n_init,
            m_factor: self.al.m_factor,
            k_schedule: self.al.k_schedule.clone(),
            t_iters: self.al.t_iters,
            test_size: self.al.test_size,
            master_seed,
        }
    }

    pub fn ensemble_config(&self, master_seed: u64, epochs: usize) -> EnsembleConfig {
        EnsembleConfig::from_master(
            self.ensemble.members_per_part,
            MlpConfig {
                hidden: self.ensemble.hidden.clone(),
                tanh_scale: self.ensemble.tanh_scale,
                sigma_floor: self.ensemble.sigma_floor,
            },
            TrainConfig {
                epochs,
                batch_size: self.train.batch_size,
                lr0: self.train.lr0,
                decay: self.train.decay,
                decay_start_epoch: self.train.decay_start_epoch,
                sigma_floor: self.ensemble.sigma_floor,
                ..TrainConfig::default()
            },
            master_seed,
        )
    }

    pub fn focal(&self) -> Result<FocalSpec> {
        let p = |xy: [f64; 2]| ObsPoint {
            x_um: xy[0],
            y_um: xy[1],
        };
        FocalSpec::new(
            p(self.design.focal_blue_um),
            p(self.design.focal_green_um),
            p(self.design.focal_red_um),
        )
    }

    pub fn opt_config(&self, seed: u64) -> DesignOptConfig {
        DesignOptConfig {
            step: self.design.step,
            iterations: self.design.iterations,
            beta_start: self.design.beta_start,
            beta_end: self.design.beta_end,
            seed,
            projection: ProjectionMode::Clamp,
        }
    }

    /// The config as written into run directories, with the seed that
    /// actually drove the run.
    pub fn echo(&self, master_seed: u64) -> Result<serde_json::Value> {
        let mut effective = self.clone();
        effective.master_seed = master_seed;
        Ok(serde_json::to_value(&effective)?)
    }
}
