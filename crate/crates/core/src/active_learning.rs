//! Variance-driven data acquisition against a pluggable expensive oracle.
//!
//! The loop: label `n_init` uniform random points, train the ensemble, then
//! for each of `T` iterations draw `M·K` uniform candidates, score them with
//! the pooled predictive variance (no oracle calls), label the top `K`, and
//! retrain warm-started for the configured epoch budget. The random-sampling
//! baseline is the `T = 0` special case with `n_init` set to the full budget.
//! A held-out test set, sampled once up front and kept disjoint from every
//! training row, yields the fractional-error learning curve.

use std::collections::HashSet;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, HistoryRow, SampleRow};
use crate::error::{Error, Result};
use crate::fdfd;
use crate::geometry::{
    encode_input, FrequencyId, NetworkInput, ParamVector, UnitCellSpec, NETWORK_WIDTHS,
};
use crate::rng;
use crate::surrogate::{
    acquisition_score, file_sha256, fractional_error, save_ensemble, Ensemble, EnsembleCheckpoint,
    EnsembleConfig,
};

/// An expensive labeler: a pure function of (params, frequency).
pub trait Oracle: Sync {
    fn name(&self) -> &'static str;
    fn label(&self, p: &ParamVector, f: FrequencyId) -> Result<Complex64>;
}

/// Wrapper that counts labels; used to enforce that candidate scoring never
/// touches the oracle.
pub struct CountingOracle<'a> {
    inner: &'a dyn Oracle,
    calls: AtomicUsize,
}

impl<'a> CountingOracle<'a> {
    pub fn new(inner: &'a dyn Oracle) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl Oracle for CountingOracle<'_> {
    fn name(&self) -> &'static str {
        self.inner.name()
    }

    fn label(&self, p: &ParamVector, f: FrequencyId) -> Result<Complex64> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.label(p, f)
    }
}

/// Full-field solves with one cached empty-cell reference per frequency.
pub struct FdfdOracle {
    spec: UnitCellSpec,
    refs: Vec<(fdfd::Grid2D, ndarray::Array2<Complex64>)>,
}

impl FdfdOracle {
    pub fn new(spec: UnitCellSpec, dx: f64) -> Result<Self> {
        let refs = FrequencyId::ALL
            .iter()
            .map(|f| fdfd::reference_field(&spec, f.wavelength_nm(), dx))
            .collect::<Result<_>>()?;
        Ok(Self { spec, refs })
    }
}

impl Oracle for FdfdOracle {
    fn name(&self) -> &'static str {
        "fdfd"
    }

    fn label(&self, p: &ParamVector, f: FrequencyId) -> Result<Complex64> {
        let (grid, reference) = &self.refs[f.index()];
        fdfd::transmission_with_reference(&self.spec, p, grid, reference)
    }
}

/// Cheap physical stand-in: each hole layer becomes a uniform layer whose
/// permittivity is the width-weighted mixture of hole and substrate, solved
/// with the transfer-matrix oracle. Exact when holes span the full period.
pub struct TransferMatrixSynthetic {
    spec: UnitCellSpec,
}

impl TransferMatrixSynthetic {
    pub fn new(spec: UnitCellSpec) -> Self {
        Self { spec }
    }
}

impl Oracle for TransferMatrixSynthetic {
    fn name(&self) -> &'static str {
        "transfer_matrix_synthetic"
    }

    fn label(&self, p: &ParamVector, f: FrequencyId) -> Result<Complex64> {
        p.check(&self.spec)?;
        let s = &self.spec;
        let eps_sub = s.n_substrate * s.n_substrate;
        let eps_hole = s.n_hole * s.n_hole;
        let mut layers = Vec::with_capacity(2 * s.layer_count);
        for (k, &w) in p.widths_nm.iter().enumerate() {
            let fill = w / s.period_nm;
            let n_eff = (fill * eps_hole + (1.0 - fill) * eps_sub).sqrt();
            layers.push((s.hole_height_nm, n_eff));
            if k + 1 < s.layer_count && s.spacer_height_nm > 0.0 {
                layers.push((s.spacer_height_nm, s.n_substrate));
            }
        }
        fdfd::tmm::normalized_stack_transmission(
            &layers,
            f.wavelength_nm(),
            s.n_substrate,
            s.n_background,
        )
    }
}

/// Frozen per-frequency constants of the analytic synthetic target. The
/// phase winds about one turn across the cube diagonal (learnable from a few
/// hundred samples, far from linear); the amplitude's weight vector is
/// dominated by two axes per frequency, concentrating the target's
/// complexity in a low-dimensional slice that uniform sampling undersamples.
const SYN_PHASE: [[f64; NETWORK_WIDTHS]; 3] = [
    [0.42, -0.28, 0.16, 0.38, -0.12, 0.24, -0.20, 0.30, 0.08, -0.22],
    [0.32, 0.22, -0.36, 0.14, 0.28, -0.16, 0.24, -0.10, 0.18, 0.26],
    [-0.24, 0.16, 0.32, -0.20, 0.22, 0.34, -0.14, 0.18, -0.28, 0.12],
];
const SYN_AMP: [[f64; NETWORK_WIDTHS]; 3] = [
    [0.31, 0.05, -0.04, 0.03, -0.28, 0.04, 0.05, -0.03, 0.04, -0.05],
    [-0.05, 0.04, 0.29, -0.03, 0.05, -0.04, 0.31, 0.03, -0.05, 0.04],
    [0.04, -0.05, 0.03, 0.30, -0.04, 0.05, -0.03, 0.28, 0.04, -0.05],
];

/// Smooth analytic complex target on normalized widths w̃ ∈ [−1, 1]:
/// t = exp(iπ·Σ c_k w̃_k) · (0.6 + 0.4·cos(π⟨a, w̃⟩)), microseconds per call.
pub struct AnalyticSynthetic {
    spec: UnitCellSpec,
}

impl AnalyticSynthetic {
    pub fn new(spec: UnitCellSpec) -> Self {
        Self { spec }
    }
}

impl Oracle for AnalyticSynthetic {
    fn name(&self) -> &'static str {
        "analytic_synthetic"
    }

    fn label(&self, p: &ParamVector, f: FrequencyId) -> Result<Complex64> {
        let w = crate::geometry::normalize(p, &self.spec)?;
        let c = &SYN_PHASE[f.index()];
        let a = &SYN_AMP[f.index()];
        let phase: f64 = w.iter().zip(c).map(|(wi, ci)| wi * ci).sum();
        let dot: f64 = w.iter().zip(a).map(|(wi, ai)| wi * ai).sum();
        let amp = 0.6 + 0.4 * (std::f64::consts::PI * dot).cos();
        Ok(Complex64::from_polar(amp, std::f64::consts::PI * phase))
    }
}

/// How many points each acquisition iteration labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum KSchedule {
    Fixed(usize),
    PerIteration(Vec<usize>),
    Doubling { start: usize },
}

impl KSchedule {
    /// K of 1-based iteration `i`.
    pub fn k_for(&self, i: usize) -> usize {
        match self {
            Self::Fixed(k) => *k,
            Self::PerIteration(list) => list[i - 1],
            Self::Doubling { start } => start << (i - 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ALConfig {
    pub n_init: usize,
    /// Oversampling factor: candidates per iteration = M·K.
    pub m_factor: usize,
    pub k_schedule: KSchedule,
    pub t_iters: usize,
    pub test_size: usize,
    pub master_seed: u64,
}

impl ALConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_init == 0 || self.m_factor == 0 || self.test_size == 0 {
            return Err(Error::Config(
                "n_init, m_factor, and test_size must all be >= 1".into(),
            ));
        }
        if let KSchedule::PerIteration(list) = &self.k_schedule {
            if list.len() != self.t_iters {
                return Err(Error::Config(format!(
                    "per-iteration K list has {} entries for {} iterations",
                    list.len(),
                    self.t_iters
                )));
            }
        }
        for i in 1..=self.t_iters {
            if self.k_schedule.k_for(i) == 0 {
                return Err(Error::Config(format!("iteration {i} has K = 0")));
            }
        }
        Ok(())
    }

    /// Total labeled training points: n_init + ΣK.
    pub fn budget(&self) -> usize {
        self.n_init + (1..=self.t_iters).map(|i| self.k_schedule.k_for(i)).sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRow {
    pub params: ParamVector,
    pub frequency: FrequencyId,
    pub t: Complex64,
    pub provenance: String,
    pub solver_seconds: f64,
}

type RowKey = (Vec<u64>, usize);

fn row_key(p: &ParamVector, f: FrequencyId) -> RowKey {
    (p.widths_nm.iter().map(|w| w.to_bits()).collect(), f.index())
}

/// Labeled rows with exact-duplicate protection on (params, frequency).
#[derive(Debug, Clone, Default)]
pub struct LabeledSet {
    rows: Vec<LabeledRow>,
    seen: HashSet<RowKey>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[LabeledRow] {
        &self.rows
    }

    pub fn contains(&self, p: &ParamVector, f: FrequencyId) -> bool {
        self.seen.contains(&row_key(p, f))
    }

    pub fn insert(&mut self, row: LabeledRow) -> Result<()> {
        if !self.seen.insert(row_key(&row.params, row.frequency)) {
            return Err(Error::Validation(
                "duplicate (params, frequency) row in labeled set".into(),
            ));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn to_sample_rows(&self) -> Result<Vec<SampleRow>> {
        self.rows
            .iter()
            .map(|r| SampleRow::new(&r.params, r.frequency, r.t, r.solver_seconds))
            .collect()
    }

    pub fn training_pairs(&self, spec: &UnitCellSpec) -> Result<Vec<(NetworkInput, Complex64)>> {
        self.rows
            .iter()
            .map(|r| Ok((encode_input(&r.params, r.frequency, spec)?, r.t)))
            .collect()
    }
}

/// One uniform in-bounds draw: widths first, then the frequency class.
pub fn sample_point(spec: &UnitCellSpec, rng: &mut ChaCha8Rng) -> (ParamVector, FrequencyId) {
    let widths = (0..spec.layer_count)
        .map(|_| rng.gen_range(spec.width_min_nm..=spec.width_max_nm))
        .collect();
    let f = FrequencyId::ALL[rng.gen_range(0..FrequencyId::ALL.len())];
    (ParamVector::new(widths), f)
}

fn sample_unique(
    spec: &UnitCellSpec,
    rng: &mut ChaCha8Rng,
    taken: &mut HashSet<RowKey>,
) -> Result<(ParamVector, FrequencyId)> {
    for _ in 0..10_000 {
        let (p, f) = sample_point(spec, rng);
        if taken.insert(row_key(&p, f)) {
            return Ok((p, f));
        }
    }
    Err(Error::Validation(
        "could not draw a fresh sample after 10000 attempts".into(),
    ))
}

/// Indices of the `k` largest scores, ties broken toward the lower index.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Score candidates with the pooled-variance acquisition and pick the top K.
pub fn select_top_k(
    candidates: &[(ParamVector, FrequencyId)],
    ensemble: &Ensemble,
    k: usize,
) -> Result<Vec<usize>> {
    if candidates.len() < k {
        return Err(Error::Config(format!(
            "cannot select {k} of {} candidates",
            candidates.len()
        )));
    }
    let xs = candidates
        .iter()
        .map(|(p, f)| encode_input(p, *f, &ensemble.cell))
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<f64> = ensemble
        .predict_batch_encoded(&xs)
        .iter()
        .map(acquisition_score)
        .collect();
    Ok(top_k_indices(&scores, k))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeReport {
    pub complex: f64,
    pub re: f64,
    pub im: f64,
}

/// Fractional error of the pooled mean over a held-out test set. The test
/// set must not share any row with the training set.
pub fn evaluate_fe(ensemble: &Ensemble, test: &LabeledSet, train: &LabeledSet) -> Result<FeReport> {
    for row in test.rows() {
        if train.contains(&row.params, row.frequency) {
            return Err(Error::Validation(
                "test set overlaps the training set".into(),
            ));
        }
    }
    let xs = test
        .rows()
        .iter()
        .map(|r| encode_input(&r.params, r.frequency, &ensemble.cell))
        .collect::<Result<Vec<_>>>()?;
    let estimates: Vec<Complex64> = ensemble
        .predict_batch_encoded(&xs)
        .iter()
        .map(|pred| pred.mean())
        .collect();
    let truths: Vec<Complex64> = test.rows().iter().map(|r| r.t).collect();
    let part = |sel: fn(&Complex64) -> f64| -> Result<f64> {
        let est: Vec<Complex64> = estimates.iter().map(|t| Complex64::new(sel(t), 0.0)).collect();
        let tru: Vec<Complex64> = truths.iter().map(|t| Complex64::new(sel(t), 0.0)).collect();
        fractional_error(&est, &tru)
    };
    Ok(FeReport {
        complex: fractional_error(&estimates, &truths)?,
        re: part(|t| t.re)?,
        im: part(|t| t.im)?,
    })
}

/// Measured wall-clock totals for one run. Kept out of the CSV rows so the
/// persisted record stays byte-reproducible; written as timing.json.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    pub oracle_seconds: f64,
    pub surrogate_eval_seconds: f64,
}

pub struct ALOutcome {
    pub ensemble: Ensemble,
    pub history: Vec<HistoryRow>,
    pub train: LabeledSet,
    pub test: LabeledSet,
    pub timing: RunTiming,
}

// Rows destined for run-directory CSVs carry solver_seconds = 0.0: identical
// runs must write identical bytes, and wall-clock readings would differ every
// time. Measured totals travel separately (see RunTiming / timing.json).
fn label_batch(
    oracle: &dyn Oracle,
    points: &[(ParamVector, FrequencyId)],
    provenance: &str,
    jobs: usize,
) -> Result<(Vec<LabeledRow>, f64)> {
    let work = |(p, f): &(ParamVector, FrequencyId)| -> Result<LabeledRow> {
        let t = oracle.label(p, *f)?;
        Ok(LabeledRow {
            params: p.clone(),
            frequency: *f,
            t,
            provenance: provenance.to_string(),
            solver_seconds: 0.0,
        })
    };
    let start = Instant::now();
    // Results are collected in input order, so scheduling cannot reorder rows.
    let rows: Vec<LabeledRow> = if jobs > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| points.par_iter().map(work).collect::<Result<_>>())?
    } else {
        points.iter().map(work).collect::<Result<_>>()?
    };
    Ok((rows, start.elapsed().as_secs_f64()))
}

fn run(
    spec: &UnitCellSpec,
    al: &ALConfig,
    ens_cfg: &EnsembleConfig,
    oracle: &dyn Oracle,
    jobs: usize,
    init_tag: &str,
) -> Result<ALOutcome> {
    al.validate()?;
    let oracle = CountingOracle::new(oracle);

    // The test set comes first so its draws never depend on the schedule.
    let mut taken = HashSet::new();
    let mut test_rng = rng::stream(al.master_seed, "test-sample", 0);
    let test_points = (0..al.test_size)
        .map(|_| sample_unique(spec, &mut test_rng, &mut taken))
        .collect::<Result<Vec<_>>>()?;
    let mut test = LabeledSet::default();
    for row in label_batch(&oracle, &test_points, "test", jobs)?.0 {
        test.insert(row)?;
    }
    let test_calls = oracle.calls();

    let mut init_rng = rng::stream(al.master_seed, "init-sample", 0);
    let init_points = (0..al.n_init)
        .map(|_| sample_unique(spec, &mut init_rng, &mut taken))
        .collect::<Result<Vec<_>>>()?;
    let mut train = LabeledSet::default();
    let (rows, mut oracle_secs) = label_batch(&oracle, &init_points, init_tag, jobs)?;
    for row in rows {
        train.insert(row)?;
    }

    let mut ensemble = Ensemble::fit(spec, ens_cfg, &train.training_pairs(spec)?, 0)?;
    let mut surrogate_secs = 0.0;
    let mut history = Vec::with_capacity(al.t_iters + 1);
    // Timing columns are written as zero (see label_batch); measured totals
    // are returned in RunTiming instead.
    let record = |ensemble: &Ensemble,
                      iter: usize,
                      train: &LabeledSet,
                      surrogate_secs: &mut f64|
     -> Result<HistoryRow> {
        let start = Instant::now();
        let fe = evaluate_fe(ensemble, &test, train)?;
        *surrogate_secs += start.elapsed().as_secs_f64();
        Ok(HistoryRow {
            iter,
            n_train: train.len(),
            fe_complex: fe.complex,
            fe_re: fe.re,
            fe_im: fe.im,
            oracle_calls: train.len(),
            oracle_seconds: 0.0,
            surrogate_eval_seconds: 0.0,
        })
    };
    history.push(record(&ensemble, 0, &train, &mut surrogate_secs)?);

    for i in 1..=al.t_iters {
        let k = al.k_schedule.k_for(i);
        let mut cand_rng = rng::stream(al.master_seed, "candidates", i as u64);
        let mut cand_taken = taken.clone();
        let candidates = (0..al.m_factor * k)
            .map(|_| sample_unique(spec, &mut cand_rng, &mut cand_taken))
            .collect::<Result<Vec<_>>>()?;

        let calls_before = oracle.calls();
        let start = Instant::now();
        let mut picked = select_top_k(&candidates, &ensemble, k)?;
        surrogate_secs += start.elapsed().as_secs_f64();
        assert_eq!(
            oracle.calls(),
            calls_before,
            "acquisition scoring must not call the oracle"
        );

        // Label in candidate order so outputs are schedule-independent.
        picked.sort_unstable();
        let chosen: Vec<(ParamVector, FrequencyId)> =
            picked.iter().map(|&j| candidates[j].clone()).collect();
        let (rows, secs) = label_batch(&oracle, &chosen, &format!("al_iter_{i}"), jobs)?;
        oracle_secs += secs;
        for row in rows {
            taken.insert(row_key(&row.params, row.frequency));
            train.insert(row)?;
        }

        ensemble = ensemble.refit(&train.training_pairs(spec)?, i as u64)?;
        history.push(record(&ensemble, i, &train, &mut surrogate_secs)?);
    }

    debug_assert_eq!(train.len(), al.budget());
    debug_assert_eq!(oracle.calls(), al.budget() + test_calls);
    Ok(ALOutcome {
        ensemble,
        history,
        train,
        test,
        timing: RunTiming {
            oracle_seconds: oracle_secs,
            surrogate_eval_seconds: surrogate_secs,
        },
    })
}

/// Algorithm: n_init random labels, then T rounds of score → label-top-K →
/// augment → warm-start retrain, with the learning curve recorded after
/// every retraining.
pub fn run_active(
    spec: &UnitCellSpec,
    al: &ALConfig,
    ens_cfg: &EnsembleConfig,
    oracle: &dyn Oracle,
    jobs: usize,
) -> Result<ALOutcome> {
    run(spec, al, ens_cfg, oracle, jobs, "init")
}

/// Random-sampling baseline: the whole budget labeled up front, one training
/// round, same held-out test set as an active run with the same master seed.
pub fn run_baseline(
    spec: &UnitCellSpec,
    n_total: usize,
    al: &ALConfig,
    ens_cfg: &EnsembleConfig,
    oracle: &dyn Oracle,
    jobs: usize,
) -> Result<ALOutcome> {
    let cfg = ALConfig {
        n_init: n_total,
        t_iters: 0,
        ..al.clone()
    };
    run(spec, &cfg, ens_cfg, oracle, jobs, "baseline")
}

/// Persist a finished run: config echo, datasets, learning curve, and the
/// ensemble checkpoint bound to its training data by hash. Everything except
/// timing.json is a pure function of config and seed at jobs = 1.
pub fn write_run_dir(
    dir: &Path,
    config_echo: &serde_json::Value,
    outcome: &ALOutcome,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join("config.json"),
        serde_json::to_string_pretty(config_echo)?,
    )?;
    dataset::write_rows(&dir.join("train.csv"), &outcome.train.to_sample_rows()?)?;
    dataset::write_rows(&dir.join("test.csv"), &outcome.test.to_sample_rows()?)?;
    dataset::write_history(&dir.join("history.csv"), &outcome.history)?;
    std::fs::write(
        dir.join("timing.json"),
        serde_json::to_string_pretty(&outcome.timing)?,
    )?;
    let ckpt = EnsembleCheckpoint {
        ensemble: outcome.ensemble.clone(),
        dataset_sha256: file_sha256(&dir.join("train.csv"))?,
    };
    save_ensemble(&dir.join("ensemble.json"), &ckpt)
}
