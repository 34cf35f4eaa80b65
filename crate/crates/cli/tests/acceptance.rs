//! Gate suite: one test per release criterion, each printing one
//! `ACCEPTANCE <nn> <name>: PASS|FAIL` verdict line (run with `--nocapture`
//! to see the lines on success; libtest shows them on failure anyway).
//! The FDFD learning-curve sweep is hours of solver time and only runs with
//! `--ignored`; the rest of the suite finishes in ~15 minutes on one core.

use std::path::Path;
use std::process::{Command, Output};

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use tempfile::TempDir;

use metasurf::active_learning::{
    run_baseline, ALConfig, AnalyticSynthetic, FdfdOracle, KSchedule, Oracle,
};
use metasurf::chebyshev;
use metasurf::dataset;
use metasurf::fdfd::{self, tmm};
use metasurf::geometry::{
    denormalize, encode_input, FrequencyId, NetworkInput, ParamVector, UnitCellSpec,
    NETWORK_INPUTS, NETWORK_WIDTHS,
};
use metasurf::metaopt::{self, CellField, FarField, FocalSpec, MetasurfaceDesign};
use metasurf::nnet::{
    backward, forward, input_gradient, nll, MemberPrediction, MlpConfig, MlpParams, TrainConfig,
};
use metasurf::rng;
use metasurf::surrogate::{fractional_error, pool, Ensemble, EnsembleConfig};

/// Runs one criterion body and prints its verdict before any panic
/// propagates, so a partially red suite still reports every line.
fn criterion<F>(number: u32, name: &str, body: F)
where
    F: FnOnce() -> Result<String, String>,
{
    match std::panic::catch_unwind(std::panic::AssertUnwindSafe(body)) {
        Ok(Ok(detail)) => println!("ACCEPTANCE {number:02} {name}: PASS ({detail})"),
        Ok(Err(detail)) => {
            println!("ACCEPTANCE {number:02} {name}: FAIL ({detail})");
            panic!("criterion {number} ({name}): {detail}");
        }
        Err(payload) => {
            println!("ACCEPTANCE {number:02} {name}: FAIL (panicked mid-check)");
            std::panic::resume_unwind(payload);
        }
    }
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_metasurf")
}

fn metasurf<I, S>(dir: &Path, args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(bin())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary should spawn")
}

fn must(out: &Output) -> String {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn read_json(path: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn read_bytes(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn median(xs: &mut [f64]) -> f64 {
    assert!(!xs.is_empty());
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let mid = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[mid]
    } else {
        0.5 * (xs[mid - 1] + xs[mid])
    }
}

/// Least-squares slope of log10(y) against log10(x).
fn fitted_slope(points: &[(f64, f64)]) -> Option<f64> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(x, y)| x > 0.0 && y > 0.0)
        .map(|&(x, y)| (x.log10(), y.log10()))
        .collect();
    if logs.len() < 2 {
        return None;
    }
    let n = logs.len() as f64;
    let sx: f64 = logs.iter().map(|p| p.0).sum();
    let sy: f64 = logs.iter().map(|p| p.1).sum();
    let sxx: f64 = logs.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = logs.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-12 {
        return None;
    }
    Some((n * sxy - sx * sy) / denom)
}

/// The ensemble shape the pipeline ships by default, at the given epoch
/// budget, with every member seed derived from `master`.
fn default_shape_ensemble(epochs: usize, master: u64) -> EnsembleConfig {
    EnsembleConfig::from_master(
        5,
        MlpConfig {
            hidden: vec![32, 32],
            tanh_scale: 2.0,
            sigma_floor: 1e-6,
        },
        TrainConfig {
            epochs,
            batch_size: 32,
            ..TrainConfig::default()
        },
        master,
    )
}

#[test]
fn acceptance_01_solver_agrees_with_the_transfer_matrix_oracle() {
    criterion(1, "solver_agrees_with_the_transfer_matrix_oracle", || {
        let mut draw = rng::stream(101, "acceptance-stacks", 0);
        let (mut worst_default, mut worst_half) = (0.0f64, 0.0f64);
        for _ in 0..20 {
            // Thicknesses on the 10 nm pixel lattice keep rasterization
            // exact at both resolutions; indices span common dielectrics.
            let layers: Vec<(f64, f64)> = (0..draw.gen_range(3..=8))
                .map(|_| {
                    (
                        10.0 * draw.gen_range(1..=12) as f64,
                        draw.gen_range(1.0..2.0),
                    )
                })
                .collect();
            for f in FrequencyId::ALL {
                let wl = f.wavelength_nm();
                let truth = tmm::normalized_stack_transmission(&layers, wl, 1.45, 1.0).unwrap();
                for (dx, worst) in [(10.0, &mut worst_default), (5.0, &mut worst_half)] {
                    let t = fdfd::label_stack(&layers, wl, dx, 1.45, 1.0).unwrap();
                    let fe = (t - truth).norm() / truth.norm();
                    *worst = worst.max(fe);
                }
            }
        }
        if worst_default < 1e-2 && worst_half < 3e-3 {
            Ok(format!(
                "20 stacks x 3 wavelengths: worst FE {worst_default:.2e} at dx 10 nm, \
                 {worst_half:.2e} at dx 5 nm"
            ))
        } else {
            Err(format!(
                "worst FE {worst_default:.2e} at dx 10 nm (bound 1e-2), \
                 {worst_half:.2e} at dx 5 nm (bound 3e-3)"
            ))
        }
    });
}

/// Smallest |hidden pre-activation|; probes this far from a kink stay on one
/// linear piece across a central-difference step.
fn min_preactivation(params: &MlpParams, x: &NetworkInput) -> f64 {
    let mut h: Vec<f64> = x.0.to_vec();
    let mut min_abs = f64::INFINITY;
    for l in &params.layers[..params.layers.len() - 1] {
        let mut next = vec![0.0; l.b.len()];
        for (o, slot) in next.iter_mut().enumerate() {
            let mut z = l.b[o];
            for (i, &hi) in h.iter().enumerate() {
                z += l.w[[o, i]] * hi;
            }
            min_abs = min_abs.min(z.abs());
            *slot = z.max(0.0);
        }
        h = next;
    }
    min_abs
}

fn kink_safe_input(params: &MlpParams, draw: &mut impl Rng) -> NetworkInput {
    loop {
        let mut x = [0.0; NETWORK_INPUTS];
        for v in x.iter_mut().take(NETWORK_WIDTHS) {
            *v = draw.gen_range(-1.0..1.0);
        }
        x[NETWORK_WIDTHS + draw.gen_range(0..3)] = 1.0;
        let x = NetworkInput(x);
        if min_preactivation(params, &x) > 1e-3 {
            return x;
        }
    }
}

#[test]
fn acceptance_02_gradients_match_central_finite_differences() {
    criterion(2, "gradients_match_central_finite_differences", || {
        let cfg = MlpConfig {
            hidden: vec![16, 16],
            tanh_scale: 2.0,
            sigma_floor: 1e-6,
        };
        let mut draw = rng::stream(202, "acceptance-fd", 0);
        let h = 1e-4;
        let rel = |fd: f64, an: f64| (fd - an).abs() / an.abs().max(fd.abs()).max(1e-8);

        let mut worst_param = 0.0f64;
        let mut param_probes = 0;
        for net in 0..10 {
            let mut params = MlpParams::init(&cfg, net).unwrap();
            let x = kink_safe_input(&params, &mut draw);
            let y = draw.gen_range(-1.0..1.0);
            let grads = backward(&params, &x, y).unwrap();
            let flat = |k: usize| -> f64 {
                let mut k = k;
                for g in &grads {
                    if k < g.w.len() {
                        return g.w.as_slice().unwrap()[k];
                    }
                    k -= g.w.len();
                    if k < g.b.len() {
                        return g.b[k];
                    }
                    k -= g.b.len();
                }
                unreachable!()
            };
            let count = params.param_count();
            for _ in 0..20 {
                let k = draw.gen_range(0..count);
                let orig = params.param(k);
                *params.param_mut(k) = orig + h;
                let up = nll(forward(&params, &x).unwrap(), y);
                *params.param_mut(k) = orig - h;
                let down = nll(forward(&params, &x).unwrap(), y);
                *params.param_mut(k) = orig;
                worst_param = worst_param.max(rel((up - down) / (2.0 * h), flat(k)));
                param_probes += 1;
            }
        }

        let mut worst_input = 0.0f64;
        let mut input_probes = 0;
        for net in 10..20 {
            let params = MlpParams::init(&cfg, net).unwrap();
            for _ in 0..20 {
                let x = kink_safe_input(&params, &mut draw);
                let (dmu, dsigma) = input_gradient(&params, &x).unwrap();
                let i = draw.gen_range(0..NETWORK_INPUTS);
                let mut up = x;
                up.0[i] += h;
                let mut down = x;
                down.0[i] -= h;
                let (pu, pd) = (forward(&params, &up).unwrap(), forward(&params, &down).unwrap());
                worst_input = worst_input.max(rel((pu.mu - pd.mu) / (2.0 * h), dmu[i]));
                worst_input = worst_input.max(rel((pu.sigma - pd.sigma) / (2.0 * h), dsigma[i]));
                input_probes += 1;
            }
        }

        assert_eq!((param_probes, input_probes), (200, 200));
        if worst_param < 1e-4 && worst_input < 1e-4 {
            Ok(format!(
                "200 loss-parameter probes (worst rel {worst_param:.1e}) and \
                 200 input probes of mu/sigma (worst rel {worst_input:.1e})"
            ))
        } else {
            Err(format!(
                "worst rel error {worst_param:.1e} (parameters) / {worst_input:.1e} (inputs) \
                 vs bound 1e-4"
            ))
        }
    });
}

#[test]
fn acceptance_03_pooled_variance_identity_and_permutation_invariance() {
    criterion(3, "pooled_variance_identity_and_permutation_invariance", || {
        let mut draw = rng::stream(303, "acceptance-pool", 0);
        let mut worst_identity = 0.0f64;
        let mut worst_permutation = 0.0f64;
        for _ in 0..10_000 {
            let j = draw.gen_range(2..=10);
            let mut members: Vec<MemberPrediction> = (0..j)
                .map(|_| MemberPrediction {
                    mu: draw.gen_range(-1.0..1.0),
                    sigma: draw.gen_range(1e-6..0.8),
                })
                .collect();
            let (mu, var) = pool(&members);
            let jf = j as f64;
            let mean_var = members.iter().map(|m| m.sigma * m.sigma).sum::<f64>() / jf;
            let pop_var = members.iter().map(|m| (m.mu - mu) * (m.mu - mu)).sum::<f64>() / jf;
            worst_identity = worst_identity.max((var - (mean_var + pop_var)).abs());

            members.shuffle(&mut draw);
            let (mu2, var2) = pool(&members);
            if j == 2 {
                // Two-term sums commute exactly in IEEE arithmetic.
                assert_eq!((mu, var), (mu2, var2));
            }
            worst_permutation = worst_permutation.max((mu - mu2).abs().max((var - var2).abs()));
        }
        if worst_identity < 1e-12 && worst_permutation < 1e-14 {
            Ok(format!(
                "10^4 tuples: identity residual {worst_identity:.1e}, \
                 permutation delta {worst_permutation:.1e} (exact for 2-member pools)"
            ))
        } else {
            Err(format!(
                "identity residual {worst_identity:.1e} (bound 1e-12), \
                 permutation delta {worst_permutation:.1e} (bound 1e-14)"
            ))
        }
    });
}

#[test]
fn acceptance_04_expected_intensity_matches_monte_carlo() {
    criterion(4, "expected_intensity_matches_monte_carlo", || {
        let spec = UnitCellSpec::normal();
        let focal = FocalSpec::three_spot_default();
        let n_draws = 100_000usize;
        let (mut worst_rel, mut worst_z) = (0.0f64, 0.0f64);
        for k in 0..20 {
            let design = MetasurfaceDesign::random(&spec, 10, 4000 + k).unwrap();
            let ff = FarField::for_design(&design, &focal).unwrap();
            let mut draw = rng::stream(404, "acceptance-mc", k);
            let field = CellField {
                mu: (0..10)
                    .map(|_| Complex64::new(draw.gen_range(-0.8..0.8), draw.gen_range(-0.8..0.8)))
                    .collect(),
                sigma: (0..10)
                    .map(|_| Complex64::new(draw.gen_range(0.0..0.4), draw.gen_range(0.0..0.4)))
                    .collect(),
            };
            for f in FrequencyId::ALL {
                let point = focal.point(f);
                let expect = ff.expected_intensity(f, &[point], &field).unwrap()[0];
                // One shared standard-normal draw scales the whole spread
                // field coherently, making the formula exact in expectation.
                let a = ff.field_at(f, &[point], &field.mu).unwrap()[0];
                let b = ff.field_at(f, &[point], &field.sigma).unwrap()[0];
                let (mut sum, mut sum_sq) = (0.0, 0.0);
                for _ in 0..n_draws {
                    let eps: f64 = StandardNormal.sample(&mut draw);
                    let i = (a + b * eps).norm_sqr();
                    sum += i;
                    sum_sq += i * i;
                }
                let mean = sum / n_draws as f64;
                let var = (sum_sq / n_draws as f64 - mean * mean).max(0.0);
                let se = (var / n_draws as f64).sqrt();
                let diff = (mean - expect).abs();
                worst_rel = worst_rel.max(diff / expect);
                worst_z = worst_z.max(if se > 0.0 { diff / se } else { 0.0 });
                if diff > (0.01 * expect).max(3.0 * se) {
                    return Err(format!(
                        "design {k} {}: MC {mean:.6e} vs formula {expect:.6e} \
                         ({:.2}% relative, {:.1} SE)",
                        f.name(),
                        100.0 * diff / expect,
                        diff / se
                    ));
                }
            }
        }
        Ok(format!(
            "60 focal intensities across 20 random designs, 10^5 draws each: \
             worst {:.2}% relative ({worst_z:.1} SE)",
            100.0 * worst_rel
        ))
    });
}

#[test]
fn acceptance_05_active_learning_beats_random_sampling() {
    criterion(5, "active_learning_beats_random_sampling", || {
        let tmp = TempDir::new().unwrap();
        let dir = tmp.path();

        // Default config: n_init 200, M = 4, K doubling from 100 over T = 6
        // (budget 6500), 5x[32,32] ensembles, synthetic oracle.
        must(&metasurf(dir, ["al-run", "--seed-list", "1,2,3", "--out", "al"]));
        must(&metasurf(dir, ["baseline-run", "--seed-list", "1,2,3", "--out", "base"]));

        let schedule = KSchedule::Doubling { start: 100 };
        let mut budgets = vec![200usize];
        for i in 1..=6 {
            budgets.push(budgets.last().unwrap() + schedule.k_for(i));
        }

        // Random-sampling curve: independent converged fits at every matched
        // budget (the final one is the main baseline run above).
        let mut random_curve: Vec<(f64, f64)> = Vec::new();
        for &b in &budgets[..budgets.len() - 1] {
            let cfg = dir.join(format!("b{b}.json"));
            std::fs::write(&cfg, format!(r#"{{"al": {{"n_init": {b}, "t_iters": 0}}}}"#))
                .unwrap();
            must(&metasurf(
                dir,
                [
                    "--config",
                    &format!("b{b}.json"),
                    "baseline-run",
                    "--seed-list",
                    "1,2,3",
                    "--out",
                    &format!("rb{b}"),
                ],
            ));
            let summary = read_json(&dir.join(format!("rb{b}/baseline-summary.json")));
            random_curve.push((b as f64, summary["median_final_fe_complex"].as_f64().unwrap()));
        }
        let al_med = read_json(&dir.join("al/al-summary.json"))["median_final_fe_complex"]
            .as_f64()
            .unwrap();
        let base_med = read_json(&dir.join("base/baseline-summary.json"))
            ["median_final_fe_complex"]
            .as_f64()
            .unwrap();
        random_curve.push((*budgets.last().unwrap() as f64, base_med));

        let mut al_curve: Vec<(f64, f64)> = Vec::new();
        for (row_idx, &b) in budgets.iter().enumerate() {
            let mut fes: Vec<f64> = (1..=3)
                .map(|s| {
                    let rows =
                        dataset::read_history(&dir.join(format!("al/al-seed{s}/history.csv")))
                            .unwrap();
                    assert_eq!(rows[row_idx].n_train, b);
                    rows[row_idx].fe_complex
                })
                .collect();
            al_curve.push((b as f64, median(&mut fes)));
        }

        let al_slope = fitted_slope(&al_curve).unwrap();
        let random_slope = fitted_slope(&random_curve).unwrap();
        let ratio = al_med / base_med;
        if al_med < base_med && ratio <= 0.9 {
            Ok(format!(
                "median FE at 6500 points: active {al_med:.4} vs random {base_med:.4} \
                 (ratio {ratio:.2}); fitted log-log slopes {al_slope:.2} vs {random_slope:.2} \
                 (reported, not asserted)"
            ))
        } else {
            Err(format!(
                "median FE at 6500 points: active {al_med:.4} vs random {base_med:.4} \
                 (ratio {ratio:.2}, need < 1 and <= 0.9)"
            ))
        }
    });
}

#[test]
#[ignore = "extended suite: hours of FDFD labeling on one core"]
fn acceptance_06_learning_curves_order_by_cell_size() {
    criterion(6, "learning_curves_order_by_cell_size", || {
        let cells = [
            UnitCellSpec::normal(),
            UnitCellSpec::small(),
            UnitCellSpec::smallest(),
        ];
        let budgets = [500usize, 1000, 2000];
        let mut medians = [[0.0f64; 3]; 3];
        for (ci, spec) in cells.iter().enumerate() {
            let oracle = FdfdOracle::new(spec.clone(), fdfd::default_dx(spec)).unwrap();
            for (bi, &b) in budgets.iter().enumerate() {
                let mut fes: Vec<f64> = [1u64, 2, 3]
                    .iter()
                    .map(|&seed| {
                        let al = ALConfig {
                            n_init: b,
                            m_factor: 4,
                            k_schedule: KSchedule::Doubling { start: 100 },
                            t_iters: 0,
                            test_size: 500,
                            master_seed: seed,
                        };
                        let ens = default_shape_ensemble(400, seed);
                        run_baseline(spec, b, &al, &ens, &oracle, 1)
                            .unwrap()
                            .history
                            .last()
                            .unwrap()
                            .fe_complex
                    })
                    .collect();
                medians[ci][bi] = median(&mut fes);
                println!(
                    "{} cell, {b} points: median FE {:.4}",
                    spec.variant_name, medians[ci][bi]
                );
            }
        }
        // Ordering is only claimed from 1000 points up.
        let ordered = (1..3).all(|bi| {
            medians[1][bi] < medians[0][bi] && medians[2][bi] < medians[1][bi]
        });
        let summary = format!(
            "median FE at 2000 points: normal {:.4} > small {:.4} > smallest {:.4}",
            medians[0][2], medians[1][2], medians[2][2]
        );
        if ordered {
            Ok(summary)
        } else {
            Err(format!("cell-size ordering violated; {summary}"))
        }
    });
}

#[test]
fn acceptance_07_surrogate_hessians_are_effectively_low_rank() {
    criterion(7, "surrogate_hessians_are_effectively_low_rank", || {
        let spec = UnitCellSpec::smallest();
        let oracle = FdfdOracle::new(spec.clone(), fdfd::default_dx(&spec)).unwrap();
        // Train at the top budget of the learning-curve grid; reading the
        // spectra afterwards is instant.
        let al = ALConfig {
            n_init: 2000,
            m_factor: 4,
            k_schedule: KSchedule::Doubling { start: 100 },
            t_iters: 0,
            test_size: 60,
            master_seed: 7,
        };
        let outcome =
            run_baseline(&spec, 2000, &al, &default_shape_ensemble(400, 7), &oracle, 1).unwrap();
        let fe = outcome.history.last().unwrap().fe_complex;

        let mut draw = rng::stream(707, "acceptance-hessian", 0);
        let mut probes = vec![ParamVector::midpoint(&spec)];
        for _ in 0..4 {
            let x: Vec<f64> = (0..NETWORK_WIDTHS).map(|_| draw.gen_range(-0.5..0.5)).collect();
            probes.push(denormalize(&x, &spec).unwrap());
        }
        // Exact spectra: rasterized labels quantize sub-pixel width changes,
        // so finite-difference steps read interpolation microstructure rather
        // than the trained function's own curvature.
        let mut ratios: Vec<f64> = probes
            .iter()
            .map(|p| {
                let s = outcome
                    .ensemble
                    .hessian_spectrum_exact(p, FrequencyId::Green)
                    .unwrap();
                (s.re[2] / s.re[0]).max(s.im[2] / s.im[0])
            })
            .collect();
        let all = ratios
            .iter()
            .map(|r| format!("{r:.3}"))
            .collect::<Vec<_>>()
            .join(", ");
        let med = median(&mut ratios);
        if med < 0.1 {
            Ok(format!(
                "median exact s3/s1 = {med:.3} over 5 interior probes [{all}] \
                 (2000-point surrogate, test FE {fe:.3})"
            ))
        } else {
            Err(format!(
                "median exact s3/s1 = {med:.3} over 5 probes [{all}], bound 0.1 \
                 (test FE {fe:.3})"
            ))
        }
    });
}

#[test]
fn acceptance_08_surrogate_is_100x_faster_than_the_solver() {
    criterion(8, "surrogate_is_100x_faster_than_the_solver", || {
        let tmp = TempDir::new().unwrap();
        let dir = tmp.path();
        // Checkpoint with the shipped ensemble shape; fit quality is
        // irrelevant to evaluation cost.
        std::fs::write(
            dir.join("quick.json"),
            r#"{"al": {"n_init": 40, "t_iters": 0, "test_size": 20},
                "train": {"baseline_epochs": 30}}"#,
        )
        .unwrap();
        must(&metasurf(
            dir,
            ["--config", "quick.json", "--seed", "5", "baseline-run", "--out", "run"],
        ));
        must(&metasurf(
            dir,
            [
                "bench",
                "--ensemble",
                "run/ensemble.json",
                "--oracle",
                "fdfd",
                "--n",
                "2000",
                "--out",
                "bench.json",
            ],
        ));
        let b = read_json(&dir.join("bench.json"));
        let surrogate = b["surrogate_s_per_point"].as_f64().unwrap();
        let solver = b["oracle_s_per_point"].as_f64().unwrap();
        let speedup = b["speedup"].as_f64().unwrap();
        if speedup >= 100.0 && surrogate > 0.0 && solver > surrogate {
            Ok(format!(
                "normal cell at dx 10 nm: {surrogate:.2e} s/point surrogate vs \
                 {solver:.2e} s/point solver ({speedup:.0}x)"
            ))
        } else {
            Err(format!(
                "speedup {speedup:.1}x (surrogate {surrogate:.2e} s, solver {solver:.2e} s), \
                 need >= 100x"
            ))
        }
    });
}

#[test]
fn acceptance_09_al_designs_validate_better_and_optimization_pays() {
    criterion(9, "al_designs_validate_better_and_optimization_pays", || {
        let tmp = TempDir::new().unwrap();
        let dir = tmp.path();
        // Equal 500-point FDFD budgets per arm on the small cell (fast labels,
        // learnable at this budget); 10-cell designs.
        std::fs::write(
            dir.join("c9.json"),
            r#"{"oracle": {"kind": "fdfd"},
                "unit_cell": {"preset": "small"},
                "al": {"n_init": 200, "m_factor": 4, "k_schedule": {"Fixed": 100},
                       "t_iters": 3, "test_size": 100},
                "design": {"n_cells": 10}}"#,
        )
        .unwrap();

        let mut rel_l2 = [Vec::new(), Vec::new()]; // [al, base]
        let mut improvements = Vec::new();
        let mut pred_vs_val = Vec::new();
        for seed in ["1", "2", "3"] {
            for (arm, run_cmd) in [("al", "al-run"), ("base", "baseline-run")] {
                let run = format!("{arm}{seed}");
                must(&metasurf(
                    dir,
                    ["--config", "c9.json", "--seed", seed, run_cmd, "--out", &run],
                ));
                must(&metasurf(
                    dir,
                    [
                        "--config",
                        "c9.json",
                        "--seed",
                        seed,
                        "design",
                        "--ensemble",
                        &format!("{run}/ensemble.json"),
                        "--out",
                        &format!("{run}/design"),
                    ],
                ));
                must(&metasurf(
                    dir,
                    [
                        "--config",
                        "c9.json",
                        "validate",
                        "--design",
                        &format!("{run}/design/design.json"),
                        "--ensemble",
                        &format!("{run}/ensemble.json"),
                        "--out",
                        &format!("{run}/val"),
                    ],
                ));
                let d = read_json(&dir.join(format!("{run}/val/discrepancy.json")));
                let idx = usize::from(arm == "base");
                rel_l2[idx].push(d["rel_l2_worst"].as_f64().unwrap());
                if arm == "al" {
                    pred_vs_val.push(
                        d["worst_case_validated"].as_f64().unwrap()
                            / d["worst_case_predicted"].as_f64().unwrap(),
                    );
                    let trace =
                        metaopt::read_trace(&dir.join(format!("{run}/design/trace.csv")))
                            .unwrap();
                    let first = trace[0].worst_case;
                    let best = trace.iter().map(|r| r.worst_case).fold(0.0, f64::max);
                    improvements.push(if first > 0.0 { best / first } else { f64::INFINITY });
                }
            }
        }

        let al_med = median(&mut rel_l2[0].clone());
        let base_med = median(&mut rel_l2[1].clone());
        let gain_med = median(&mut improvements.clone());
        let ratio_med = median(&mut pred_vs_val.clone());
        let detail = format!(
            "median focal-line rel L2: active {al_med:.3} vs random {base_med:.3} \
             (per-seed al {:?} / base {:?}); median optimization gain {gain_med:.1}x; \
             median validated/predicted worst case {ratio_med:.2}",
            rel_l2[0].iter().map(|v| (v * 1e3).round() / 1e3).collect::<Vec<_>>(),
            rel_l2[1].iter().map(|v| (v * 1e3).round() / 1e3).collect::<Vec<_>>(),
        );
        if al_med < base_med && gain_med >= 2.0 {
            Ok(detail)
        } else {
            Err(format!("{detail}; need active < random and gain >= 2x"))
        }
    });
}

#[test]
fn acceptance_10_identical_config_and_seed_reproduce_identical_bytes() {
    criterion(10, "identical_config_and_seed_reproduce_identical_bytes", || {
        let tmp = TempDir::new().unwrap();
        let dir = tmp.path();
        std::fs::write(
            dir.join("c10.json"),
            r#"{"oracle": {"kind": "fdfd"}, "unit_cell": {"preset": "small"},
                "ensemble": {"members_per_part": 2, "hidden": [16, 16]},
                "train": {"epochs": 30, "baseline_epochs": 40},
                "al": {"n_init": 12, "m_factor": 3, "k_schedule": {"Fixed": 6},
                       "t_iters": 1, "test_size": 8},
                "master_seed": 11}"#,
        )
        .unwrap();
        for run in ["r1", "r2"] {
            must(&metasurf(dir, ["--config", "c10.json", "al-run", "--out", run]));
        }
        for name in ["history.csv", "ensemble.json", "train.csv", "test.csv", "config.json"] {
            if read_bytes(&dir.join("r1").join(name)) != read_bytes(&dir.join("r2").join(name)) {
                return Err(format!("solver-labeled reruns differ in {name}"));
            }
        }
        for out in ["d1.csv", "d2.csv"] {
            must(&metasurf(dir, ["--seed", "3", "gen-data", "--n", "30", "--out", out]));
        }
        if read_bytes(&dir.join("d1.csv")) != read_bytes(&dir.join("d2.csv")) {
            return Err("gen-data reruns differ".into());
        }
        Ok(
            "repeated solver-labeled al-run and synthetic gen-data are byte-identical \
             across history, datasets, and checkpoints (timing telemetry lives outside them)"
                .into(),
        )
    });
}

#[test]
fn acceptance_11_chebyshev_baseline_is_exact_and_exported() {
    criterion(11, "chebyshev_baseline_is_exact_and_exported", || {
        // Exactness on random tensor-product polynomials of per-axis degree
        // n-1, the class the interpolant must reproduce.
        let mut draw = rng::stream(1111, "acceptance-cheb", 0);
        let mut worst_poly = 0.0f64;
        for &(n, d) in &[(4usize, 3usize), (3, 4)] {
            let exps: Vec<Vec<usize>> = chebyshev::tensor_nodes(n, d)
                .unwrap()
                .iter()
                .enumerate()
                .map(|(k, _)| {
                    let mut e = Vec::with_capacity(d);
                    let mut k = k;
                    for _ in 0..d {
                        e.push(k % n);
                        k /= n;
                    }
                    e
                })
                .collect();
            let coeffs: Vec<f64> = exps.iter().map(|_| draw.gen_range(-1.0..1.0)).collect();
            let poly = |x: &[f64]| -> f64 {
                exps.iter()
                    .zip(&coeffs)
                    .map(|(e, c)| {
                        c * e.iter().zip(x).map(|(&p, &xi)| xi.powi(p as i32)).product::<f64>()
                    })
                    .sum()
            };
            let nodes = chebyshev::tensor_nodes(n, d).unwrap();
            let values: Vec<f64> = nodes.iter().map(|x| poly(x)).collect();
            let fit = chebyshev::fit(n, d, &values).unwrap();
            for _ in 0..300 {
                let x: Vec<f64> = (0..d).map(|_| draw.gen_range(-1.0..1.0)).collect();
                worst_poly = worst_poly.max((chebyshev::eval(&fit, &x).unwrap() - poly(&x)).abs());
            }
        }
        if worst_poly > 1e-8 {
            return Err(format!("tensor-polynomial residual {worst_poly:.1e}, bound 1e-8"));
        }

        // 81-node budget on the synthetic target, 4 active axes: tensor
        // interpolant vs the default-shape ensemble on identical data.
        let spec = UnitCellSpec::normal();
        let oracle = AnalyticSynthetic::new(spec.clone());
        let embed = |x: &[f64]| {
            let mut w = vec![0.0; NETWORK_WIDTHS];
            w[..x.len()].copy_from_slice(x);
            denormalize(&w, &spec).unwrap()
        };
        let nodes = chebyshev::tensor_nodes(3, 4).unwrap();
        let mut rows = Vec::with_capacity(3 * nodes.len());
        for f in FrequencyId::ALL {
            for x in &nodes {
                let p = embed(x);
                let t = oracle.label(&p, f).unwrap();
                rows.push((encode_input(&p, f, &spec).unwrap(), t));
            }
        }
        let ensemble =
            Ensemble::fit(&spec, &default_shape_ensemble(400, 1100), &rows, 0).unwrap();
        let test_xs: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..4).map(|_| draw.gen_range(-1.0..=1.0)).collect())
            .collect();
        let (mut truths, mut cheb_est, mut nn_est) = (Vec::new(), Vec::new(), Vec::new());
        for f in FrequencyId::ALL {
            let values: Vec<Complex64> =
                nodes.iter().map(|x| oracle.label(&embed(x), f).unwrap()).collect();
            let model = chebyshev::ChebModel::fit(f, 3, 4, &values).unwrap();
            for x in &test_xs {
                truths.push(oracle.label(&embed(x), f).unwrap());
                cheb_est.push(model.eval(x).unwrap());
                let pred = ensemble.predict(&embed(x), f).unwrap();
                nn_est.push(Complex64::new(pred.mu_re, pred.mu_im));
            }
        }
        let cheb_fe = fractional_error(&cheb_est, &truths).unwrap();
        let nn_fe = fractional_error(&nn_est, &truths).unwrap();

        // Export contract: curve abscissae are the tensor node counts and the
        // documented full-scale grid is 3^10 nodes per frequency.
        let tmp = TempDir::new().unwrap();
        let dir = tmp.path();
        std::fs::write(
            dir.join("c11.json"),
            r#"{"ensemble": {"members_per_part": 2, "hidden": [16, 16]},
                "train": {"epochs": 30, "baseline_epochs": 40},
                "al": {"n_init": 25, "m_factor": 3, "k_schedule": {"Fixed": 10},
                       "t_iters": 2, "test_size": 20},
                "master_seed": 31}"#,
        )
        .unwrap();
        must(&metasurf(dir, ["--config", "c11.json", "al-run", "--out", "run"]));
        must(&metasurf(
            dir,
            ["export-plots", "run", "--chebyshev", "--out", "plots"],
        ));
        let curve = std::fs::read_to_string(dir.join("plots/chebyshev_curve.csv")).unwrap();
        let ns: Vec<usize> = curve
            .lines()
            .skip(1)
            .map(|l| l.split(',').next().unwrap().parse().unwrap())
            .collect();
        if ns != vec![1, 16, 81] {
            return Err(format!("export abscissae {ns:?}, expected n^d = [1, 16, 81]"));
        }
        let schema = read_json(&dir.join("plots/chebyshev_curve.schema.json"));
        let full_nodes = schema["full_scale"]["nodes_per_frequency"].as_u64().unwrap();
        if full_nodes != 59049 {
            return Err(format!("documented full-scale grid {full_nodes}, expected 3^10"));
        }
        Ok(format!(
            "tensor-polynomial residual {worst_poly:.1e}; 81-node FE: interpolant {cheb_fe:.3} \
             vs ensemble {nn_fe:.3} (both reported); export abscissae [1, 16, 81] with \
             3^10 = 59049 documented"
        ))
    });
}
