//! Subcommand implementations. Each returns through [`metasurf::error::Error`]
//! so `main` can map config/usage problems to exit 2 and solver or numeric
//! failures to exit 3.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use num_complex::Complex64;
use serde::Serialize;

use metasurf::active_learning::{
    run_active, run_baseline, sample_point, write_run_dir, Oracle,
};
use metasurf::chebyshev::{tensor_nodes, ChebModel};
use metasurf::dataset::{self, SampleRow};
use metasurf::error::{Error, Result};
use metasurf::fdfd;
use metasurf::geometry::{denormalize, FrequencyId, ParamVector, NETWORK_WIDTHS};
use metasurf::metaopt::{
    self, line_xs, objective_from_fields, optimize, save_design, write_trace, AmpSource,
    CellField, DesignFile, FarField, MetasurfaceDesign,
};
use metasurf::rng;
use metasurf::surrogate::{fractional_error, load_ensemble};

use crate::config::{OracleKind, RunConfig};

/// Label `n` uniform random points and stream them to a dataset CSV. Rows
/// are flushed in blocks, so a solver failure keeps every completed block.
pub fn gen_data(
    cfg: &RunConfig,
    seed: u64,
    jobs: usize,
    n: usize,
    out: &Path,
    kind: Option<OracleKind>,
) -> Result<()> {
    let spec = cfg.spec()?;
    let oracle = cfg.oracle(&spec, kind)?;
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(BufWriter::new(File::create(out)?));
    w.write_record(dataset::CSV_HEADER.split(','))?;
    w.flush()?;

    let mut r = rng::stream(seed, "gen-data", 0);
    let points: Vec<_> = (0..n).map(|_| sample_point(&spec, &mut r)).collect();
    let start = Instant::now();
    for chunk in points.chunks(64 * jobs) {
        let rows = label_points(oracle.as_ref(), chunk, jobs)?;
        for row in &rows {
            w.serialize(row)?;
        }
        w.flush()?;
    }
    println!(
        "labeled {n} points with {} in {:.3} s -> {}",
        oracle.name(),
        start.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}

// solver_seconds is written as zero: the CSV must reproduce byte for byte
// under a fixed seed, and wall clocks never repeat (timing goes to stdout).
fn label_points(
    oracle: &dyn Oracle,
    pts: &[(ParamVector, FrequencyId)],
    jobs: usize,
) -> Result<Vec<SampleRow>> {
    let work = |(p, f): &(ParamVector, FrequencyId)| -> Result<SampleRow> {
        SampleRow::new(p, *f, oracle.label(p, *f)?, 0.0)
    };
    if jobs > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| pts.par_iter().map(work).collect())
    } else {
        pts.iter().map(work).collect()
    }
}

/// `al-run` / `baseline-run`: one run directory per seed, plus a summary
/// file when `--seed-list` drives several seeds.
pub fn run_pipeline(
    cfg: &RunConfig,
    seeds: &[u64],
    jobs: usize,
    out: Option<&Path>,
    baseline: bool,
) -> Result<()> {
    let spec = cfg.spec()?;
    let oracle = cfg.oracle(&spec, None)?;
    let prefix = if baseline { "baseline" } else { "al" };
    let mut finals = Vec::new();
    let mut dirs = Vec::new();
    for &s in seeds {
        let al = cfg.al_config(s);
        al.validate()?;
        // A zero-iteration active run IS a baseline run at the same budget;
        // dispatching both through run_baseline keeps their outputs
        // byte-identical, as the equivalence demands.
        let as_baseline = baseline || al.t_iters == 0;
        let epochs = if as_baseline {
            cfg.train.baseline_epochs
        } else {
            cfg.train.epochs
        };
        let ens = cfg.ensemble_config(s, epochs);
        let outcome = if as_baseline {
            run_baseline(&spec, al.budget(), &al, &ens, oracle.as_ref(), jobs)?
        } else {
            run_active(&spec, &al, &ens, oracle.as_ref(), jobs)?
        };
        let dir = match (out, seeds.len()) {
            (Some(o), 1) => o.to_path_buf(),
            (Some(o), _) => o.join(format!("{prefix}-seed{s}")),
            (None, _) => cfg.output_dir.join(format!("{prefix}-seed{s}")),
        };
        write_run_dir(&dir, &cfg.echo(s)?, &outcome)?;
        let last = outcome.history.last().expect("history always has a row");
        println!(
            "{prefix} seed {s}: n_train {} final fe_complex {:.6} -> {}",
            last.n_train,
            last.fe_complex,
            dir.display()
        );
        finals.push(last.fe_complex);
        dirs.push(dir.display().to_string());
    }
    if seeds.len() > 1 {
        let med = median(&finals);
        println!(
            "{prefix} median final fe_complex over {} seeds: {med:.6}",
            seeds.len()
        );
        let parent = out
            .map(Path::to_path_buf)
            .unwrap_or_else(|| cfg.output_dir.clone());
        std::fs::create_dir_all(&parent)?;
        let summary = serde_json::json!({
            "command": format!("{prefix}-run"),
            "seeds": seeds,
            "final_fe_complex": finals,
            "median_final_fe_complex": med,
            "run_dirs": dirs,
        });
        std::fs::write(
            parent.join(format!("{prefix}-summary.json")),
            serde_json::to_string_pretty(&summary)?,
        )?;
    }
    Ok(())
}

fn median(xs: &[f64]) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn load_checkpoint(path: &Path) -> Result<metasurf::surrogate::EnsembleCheckpoint> {
    load_ensemble(path)
        .map_err(|e| Error::Config(format!("ensemble checkpoint {}: {e}", path.display())))
}

/// Optimize a random starting design against an ensemble checkpoint.
pub fn design(cfg: &RunConfig, seed: u64, ensemble_path: &Path, out: Option<&Path>) -> Result<()> {
    let ensemble = load_checkpoint(ensemble_path)?.ensemble;
    // The checkpoint's cell defines the surrogate's domain, so it wins over
    // the config preset.
    let focal = cfg.focal()?;
    let design0 = MetasurfaceDesign::random(&ensemble.cell, cfg.design.n_cells, seed)?;
    let outcome = optimize(&design0, &ensemble, &focal, &cfg.opt_config(seed))?;
    let dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output_dir.join(format!("design-seed{seed}")));
    std::fs::create_dir_all(&dir)?;
    std::fs::write(
        dir.join("config.json"),
        serde_json::to_string_pretty(&cfg.echo(seed)?)?,
    )?;
    save_design(
        &dir.join("design.json"),
        &DesignFile {
            design: outcome.design.clone(),
            focal,
        },
    )?;
    write_trace(&dir.join("trace.csv"), &outcome.trace)?;
    println!(
        "design seed {seed}: worst-case focal intensity {:.6} -> {:.6} -> {}",
        outcome.initial.worst_case,
        outcome.best.worst_case,
        dir.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct Discrepancy {
    rel_l2_blue: f64,
    rel_l2_green: f64,
    rel_l2_red: f64,
    rel_l2_worst: f64,
    predicted_focal_intensity: [f64; 3],
    validated_focal_intensity: [f64; 3],
    worst_case_predicted: f64,
    worst_case_validated: f64,
    solver_seconds: f64,
}

/// Re-solve a design cell by cell with FDFD and compare the resulting focal
/// lines against the amplitude source's prediction.
pub fn validate_design(
    cfg: &RunConfig,
    jobs: usize,
    design_path: &Path,
    ensemble_path: Option<&Path>,
    self_check: bool,
    out: Option<&Path>,
) -> Result<()> {
    let file = metaopt::load_design(design_path)
        .map_err(|e| Error::Config(format!("design file {}: {e}", design_path.display())))?;
    let (design, focal) = (file.design, file.focal);
    let dx = cfg.dx_nm(&design.spec);
    let xs = line_xs(
        cfg.design.line_x_min_um,
        cfg.design.line_x_max_um,
        cfg.design.line_samples,
    );

    let checkpoint;
    let table;
    let source = if self_check {
        // Identity check: feed the design's own solver labels back in as the
        // amplitude table, so predicted and validated lines must coincide.
        table = label_table(&design, dx)?;
        AmpSource::Table(&table)
    } else {
        let p = ensemble_path.ok_or_else(|| {
            Error::Config("validate needs --ensemble (or --self-check)".into())
        })?;
        checkpoint = load_checkpoint(p)?;
        AmpSource::Surrogate(&checkpoint.ensemble)
    };
    let report = metaopt::validate(&design, &source, &focal, &xs, dx, jobs)?;

    let ff = FarField::for_design(&design, &focal)?;
    let predicted_fields = source_fields(&source, &design)?;
    let predicted_obj = objective_from_fields(&ff, &focal, &predicted_fields)?;
    let validated_fields = [
        CellField::from_table(&report.labels[0]),
        CellField::from_table(&report.labels[1]),
        CellField::from_table(&report.labels[2]),
    ];
    let validated_obj = objective_from_fields(&ff, &focal, &validated_fields)?;

    let dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output_dir.join("validate"));
    std::fs::create_dir_all(&dir)?;
    let line_headers = ["x_um", "intensity_blue", "intensity_green", "intensity_red"];
    let lines = |triple: &[metaopt::FocalLine; 3]| -> Vec<Vec<f64>> {
        vec![
            report.xs_um.clone(),
            triple[0].intensity.clone(),
            triple[1].intensity.clone(),
            triple[2].intensity.clone(),
        ]
    };
    dataset::write_columns(
        &dir.join("focal_line_predicted.csv"),
        &line_headers,
        &lines(&report.predicted),
    )?;
    dataset::write_columns(
        &dir.join("focal_line_validated.csv"),
        &line_headers,
        &lines(&report.validated),
    )?;
    let summary = Discrepancy {
        rel_l2_blue: report.rel_l2[0],
        rel_l2_green: report.rel_l2[1],
        rel_l2_red: report.rel_l2[2],
        rel_l2_worst: report.rel_l2.iter().cloned().fold(0.0, f64::max),
        predicted_focal_intensity: predicted_obj.per_wavelength,
        validated_focal_intensity: validated_obj.per_wavelength,
        worst_case_predicted: predicted_obj.worst_case,
        worst_case_validated: validated_obj.worst_case,
        solver_seconds: report.solver_seconds,
    };
    std::fs::write(
        dir.join("discrepancy.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    println!(
        "validate: rel_l2 [{:.6} {:.6} {:.6}] worst-case predicted {:.6} validated {:.6} -> {}",
        summary.rel_l2_blue,
        summary.rel_l2_green,
        summary.rel_l2_red,
        summary.worst_case_predicted,
        summary.worst_case_validated,
        dir.display()
    );
    Ok(())
}

fn source_fields(source: &AmpSource, design: &MetasurfaceDesign) -> Result<[CellField; 3]> {
    Ok(match source {
        AmpSource::Surrogate(ens) => [
            CellField::from_surrogate(ens, design, FrequencyId::Blue)?,
            CellField::from_surrogate(ens, design, FrequencyId::Green)?,
            CellField::from_surrogate(ens, design, FrequencyId::Red)?,
        ],
        AmpSource::Table(t) => [
            CellField::from_table(&t[0]),
            CellField::from_table(&t[1]),
            CellField::from_table(&t[2]),
        ],
    })
}

fn label_table(design: &MetasurfaceDesign, dx_nm: f64) -> Result<[Vec<Complex64>; 3]> {
    let mut out = [Vec::new(), Vec::new(), Vec::new()];
    for f in FrequencyId::ALL {
        for cell in &design.cells {
            out[f.index()].push(fdfd::label(&design.spec, cell, f, dx_nm)?.t);
        }
    }
    Ok(out)
}

/// Mean per-point wall time of surrogate prediction vs. oracle labeling.
pub fn bench(
    cfg: &RunConfig,
    seed: u64,
    ensemble_path: &Path,
    kind: Option<OracleKind>,
    n: usize,
    out: Option<&Path>,
) -> Result<()> {
    if n == 0 {
        return Err(Error::Config("bench needs --n >= 1".into()));
    }
    let ensemble = load_checkpoint(ensemble_path)?.ensemble;
    let spec = ensemble.cell.clone();
    let oracle = cfg.oracle(&spec, kind)?;

    let mut r = rng::stream(seed, "bench-surrogate", 0);
    let pts: Vec<_> = (0..n).map(|_| sample_point(&spec, &mut r)).collect();
    ensemble.predict(&pts[0].0, pts[0].1)?;
    let start = Instant::now();
    let mut sink = 0.0;
    for (p, f) in &pts {
        sink += ensemble.predict(p, *f)?.mu_re;
    }
    let surrogate_s = start.elapsed().as_secs_f64() / n as f64;
    std::hint::black_box(sink);

    // A handful of labels suffices for a per-point mean; FDFD solves are
    // seconds each, and n is sized for the microsecond-scale surrogate.
    let m = n.min(3);
    let mut r = rng::stream(seed, "bench-oracle", 0);
    let opts: Vec<_> = (0..m).map(|_| sample_point(&spec, &mut r)).collect();
    let start = Instant::now();
    let mut osink = Complex64::new(0.0, 0.0);
    for (p, f) in &opts {
        osink += oracle.label(p, *f)?;
    }
    let oracle_s = start.elapsed().as_secs_f64() / m as f64;
    std::hint::black_box(osink);

    let report = serde_json::json!({
        "surrogate_s_per_point": surrogate_s,
        "oracle_s_per_point": oracle_s,
        "speedup": oracle_s / surrogate_s,
    });
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    if let Some(path) = out {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        std::fs::write(path, text)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct CurveRow {
    n_train: usize,
    fe_complex: f64,
    fe_re: f64,
    fe_im: f64,
}

/// Emit plot-ready CSVs from a finished run directory: the learning curve
/// (sorted, with its fitted log-log slope), any focal-line scans, and
/// optionally a Chebyshev-interpolation curve at n^d-point budgets.
pub fn export_plots(run_dir: &Path, out: Option<&Path>, with_chebyshev: bool) -> Result<()> {
    let cfg = RunConfig::load(Some(&run_dir.join("config.json")))
        .map_err(|e| Error::Config(format!("incomplete run dir {}: {e}", run_dir.display())))?;
    let history = dataset::read_history(&run_dir.join("history.csv"))
        .map_err(|e| Error::Config(format!("incomplete run dir {}: {e}", run_dir.display())))?;
    if history.is_empty() {
        return Err(Error::Config("history.csv has no rows".into()));
    }
    let dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| run_dir.join("plots"));
    std::fs::create_dir_all(&dir)?;

    let mut rows: Vec<CurveRow> = history
        .iter()
        .map(|h| CurveRow {
            n_train: h.n_train,
            fe_complex: h.fe_complex,
            fe_re: h.fe_re,
            fe_im: h.fe_im,
        })
        .collect();
    rows.sort_by_key(|r| r.n_train);
    write_csv(&dir.join("learning_curve.csv"), &rows)?;

    let pts: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r.n_train as f64, r.fe_complex))
        .collect();
    let slope = loglog_slope(&pts);
    match slope {
        Some(s) => println!("learning-curve log-log slope: {s:.4}"),
        None => println!("learning-curve log-log slope: undefined (single budget)"),
    }
    let schema = serde_json::json!({
        "file": "learning_curve.csv",
        "source": "history.csv, sorted ascending in n_train",
        "columns": [
            {"name": "n_train", "description": "labeled training points"},
            {"name": "fe_complex", "description": "fractional error of the pooled complex prediction on the held-out test set"},
            {"name": "fe_re", "description": "fractional error, real part only"},
            {"name": "fe_im", "description": "fractional error, imaginary part only"},
        ],
        "fitted_log10_slope": slope,
    });
    std::fs::write(
        dir.join("learning_curve.schema.json"),
        serde_json::to_string_pretty(&schema)?,
    )?;

    for name in ["focal_line_predicted.csv", "focal_line_validated.csv"] {
        let src = run_dir.join(name);
        if src.exists() {
            std::fs::copy(&src, dir.join(name))?;
        }
    }

    if with_chebyshev {
        let curve = chebyshev_curve(&cfg)?;
        let mut w = csv::Writer::from_path(dir.join("chebyshev_curve.csv"))?;
        w.write_record(["n_train", "fe_complex"])?;
        for &(n_train, fe) in &curve {
            w.write_record([n_train.to_string(), format!("{fe}")])?;
        }
        w.flush()?;
        let d = cfg.chebyshev.d as u32;
        let schema = serde_json::json!({
            "file": "chebyshev_curve.csv",
            "columns": [
                {"name": "n_train", "description": "tensor-grid size n^d: oracle labels per frequency"},
                {"name": "fe_complex", "description": "fractional error of the Chebyshev interpolant on random points in the active-dimension slice"},
            ],
            "nodes_per_axis": cfg.chebyshev.n,
            "active_dims": cfg.chebyshev.d,
            "full_scale": {
                "n": 3,
                "d": NETWORK_WIDTHS,
                "nodes_per_frequency": 3usize.pow(NETWORK_WIDTHS as u32),
            },
        });
        std::fs::write(
            dir.join("chebyshev_curve.schema.json"),
            serde_json::to_string_pretty(&schema)?,
        )?;
        for (n_train, fe) in &curve {
            println!("chebyshev n_train {n_train} (n^{d}): fe_complex {fe:.6}");
        }
    }
    println!("plots -> {}", dir.display());
    Ok(())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Least-squares slope of log10(y) against log10(x); `None` when fewer than
/// two distinct positive abscissae survive.
fn loglog_slope(pts: &[(f64, f64)]) -> Option<f64> {
    let logs: Vec<(f64, f64)> = pts
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.log10(), y.log10()))
        .collect();
    let n = logs.len() as f64;
    let first = logs.first()?.0;
    if !logs.iter().any(|(x, _)| *x != first) {
        return None;
    }
    let xm = logs.iter().map(|(x, _)| x).sum::<f64>() / n;
    let ym = logs.iter().map(|(_, y)| y).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|(x, _)| (x - xm) * (x - xm)).sum();
    let sxy: f64 = logs.iter().map(|(x, y)| (x - xm) * (y - ym)).sum();
    Some(sxy / sxx)
}

/// Chebyshev learning curve on the configured oracle: for each per-axis node
/// count up to the configured `n`, fit the d-dimensional tensor interpolant
/// (remaining widths held at the cell midpoint) and measure its fractional
/// error on random points in the same slice.
fn chebyshev_curve(cfg: &RunConfig) -> Result<Vec<(usize, f64)>> {
    let spec = cfg.spec()?;
    let oracle = cfg.oracle(&spec, None)?;
    let d = cfg.chebyshev.d;
    if d == 0 || d > NETWORK_WIDTHS {
        return Err(Error::Config(format!(
            "chebyshev.d must be in 1..={NETWORK_WIDTHS}, got {d}"
        )));
    }
    if cfg.chebyshev.n == 0 {
        return Err(Error::Config("chebyshev.n must be >= 1".into()));
    }
    let embed = |x: &[f64]| -> Result<ParamVector> {
        let mut w = vec![0.0; NETWORK_WIDTHS];
        w[..d].copy_from_slice(x);
        denormalize(&w, &spec)
    };

    let mut test_rng = rng::stream(cfg.master_seed, "cheb-test", 0);
    let n_test = cfg.al.test_size;
    let test_xs: Vec<Vec<f64>> = (0..n_test)
        .map(|_| {
            (0..d)
                .map(|_| rand::Rng::gen_range(&mut test_rng, -1.0..=1.0))
                .collect()
        })
        .collect();
    let mut truths = Vec::with_capacity(3 * n_test);
    for f in FrequencyId::ALL {
        for x in &test_xs {
            truths.push(oracle.label(&embed(x)?, f)?);
        }
    }

    let mut curve = Vec::new();
    for nodes_per_axis in 1..=cfg.chebyshev.n {
        let nodes = tensor_nodes(nodes_per_axis, d)?;
        let mut estimates = Vec::with_capacity(3 * n_test);
        for f in FrequencyId::ALL {
            let values = nodes
                .iter()
                .map(|x| oracle.label(&embed(x)?, f))
                .collect::<Result<Vec<_>>>()?;
            let model = ChebModel::fit(f, nodes_per_axis, d, &values)?;
            for x in &test_xs {
                estimates.push(model.eval(x)?);
            }
        }
        let fe = fractional_error(&estimates, &truths)?;
        curve.push((nodes.len(), fe));
    }
    Ok(curve)
}
