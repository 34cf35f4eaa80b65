//! `metasurf`: dataset generation, active-learning runs, metasurface design
//! and validation, benchmarking, and plot-ready export.
//!
//! All state flows through the JSON run config (`--config`; every field has
//! a default) plus the flags below — no environment variables. Exit codes:
//! 0 success, 2 config/usage error, 3 solver or numeric failure. At
//! `--jobs 1` every output is a pure function of config and seed.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use config::{OracleKind, RunConfig};
use metasurf::error::{Error, Result};

#[derive(Parser)]
#[command(name = "metasurf", version, about = "Uncertainty-aware surrogate models of unit-cell transmission, and metasurfaces designed against them")]
struct Cli {
    /// JSON run config; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed, overriding the config's.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads for oracle batches; 1 (the default) is bit-deterministic.
    #[arg(long, global = true, value_name = "N", default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Label uniform random points with the configured oracle into a CSV.
    GenData {
        /// How many points to label.
        #[arg(long)]
        n: usize,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Override the config's oracle.
        #[arg(long, value_enum)]
        oracle: Option<OracleKind>,
    },
    /// Active-learning run: variance-ranked acquisition rounds after a
    /// random seed set; writes a run directory per seed.
    AlRun {
        /// Run once per seed and write a median summary.
        #[arg(long, value_name = "A,B,C", value_delimiter = ',')]
        seed_list: Option<Vec<u64>>,
        /// Run directory (default: <output_dir>/al-seed<SEED>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Random-sampling baseline at the same total label budget.
    BaselineRun {
        /// Run once per seed and write a median summary.
        #[arg(long, value_name = "A,B,C", value_delimiter = ',')]
        seed_list: Option<Vec<u64>>,
        /// Run directory (default: <output_dir>/baseline-seed<SEED>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimize a multi-wavelength focusing metasurface against an ensemble
    /// checkpoint; writes design.json and trace.csv.
    Design {
        /// Ensemble checkpoint (ensemble.json from a run directory).
        #[arg(long)]
        ensemble: PathBuf,
        /// Output directory (default: <output_dir>/design-seed<SEED>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-solve a design cell by cell and compare validated focal lines
    /// against the predicted ones.
    Validate {
        /// design.json written by the design command.
        #[arg(long)]
        design: PathBuf,
        /// Ensemble checkpoint predicting the cell amplitudes.
        #[arg(long)]
        ensemble: Option<PathBuf>,
        /// Use the design's own solver labels as the amplitude source; the
        /// discrepancy must come out exactly zero.
        #[arg(long, conflicts_with = "ensemble")]
        self_check: bool,
        /// Output directory (default: <output_dir>/validate).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time surrogate prediction against oracle labeling.
    Bench {
        /// Ensemble checkpoint to time.
        #[arg(long)]
        ensemble: PathBuf,
        /// Override the config's oracle.
        #[arg(long, value_enum)]
        oracle: Option<OracleKind>,
        /// Surrogate evaluation count (the oracle gets min(n, 3) labels).
        #[arg(long, default_value_t = 1000)]
        n: usize,
        /// Also write the timing report JSON to this path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export plot-ready CSVs and schemas from a finished run directory.
    ExportPlots {
        /// Run directory containing config.json and history.csv.
        run_dir: PathBuf,
        /// Output directory (default: <run_dir>/plots).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also fit and export the Chebyshev-interpolation curve at
        /// n^d-point budgets.
        #[arg(long)]
        chebyshev: bool,
    },
}

fn dispatch(cli: Cli) -> Result<()> {
    if cli.jobs == 0 {
        return Err(Error::Config("--jobs must be >= 1".into()));
    }
    let cfg = RunConfig::load(cli.config.as_deref())?;
    let seed = cli.seed.unwrap_or(cfg.master_seed);
    match cli.command {
        Cmd::GenData { n, out, oracle } => {
            commands::gen_data(&cfg, seed, cli.jobs, n, &out, oracle)
        }
        Cmd::AlRun { seed_list, out } => {
            let seeds = seed_list.unwrap_or_else(|| vec![seed]);
            commands::run_pipeline(&cfg, &seeds, cli.jobs, out.as_deref(), false)
        }
        Cmd::BaselineRun { seed_list, out } => {
            let seeds = seed_list.unwrap_or_else(|| vec![seed]);
            commands::run_pipeline(&cfg, &seeds, cli.jobs, out.as_deref(), true)
        }
        Cmd::Design { ensemble, out } => commands::design(&cfg, seed, &ensemble, out.as_deref()),
        Cmd::Validate {
            design,
            ensemble,
            self_check,
            out,
        } => commands::validate_design(
            &cfg,
            cli.jobs,
            &design,
            ensemble.as_deref(),
            self_check,
            out.as_deref(),
        ),
        Cmd::Bench {
            ensemble,
            oracle,
            n,
            out,
        } => commands::bench(&cfg, seed, &ensemble, oracle, n, out.as_deref()),
        Cmd::ExportPlots {
            run_dir,
            out,
            chebyshev,
        } => commands::export_plots(&run_dir, out.as_deref(), chebyshev),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e}");
        std::process::exit(match e {
            Error::Solver(_) | Error::Numeric(_) => 3,
            _ => 2,
        });
    }
}
