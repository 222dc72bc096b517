//! Builds problems and schedules from a config, runs seed sweeps and writes
//! the per-seed and aggregate CSVs.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use thiserror::Error;
use trgs_core::algorithms::{
    derive_schedule, run_drtr, run_sgd_baseline, run_trust_region, run_trust_region_vr, BtPolicy, RunDiagnostics,
    RunStatus, RunTrace, Schedule, StopRule, TraceRecord,
};
use trgs_core::diagnostics::{certify, per_class_accuracy, ClassAccuracy, StationarityCertificate, MAX_CERTIFY_DIM};
use trgs_core::dro::DroDualObjective;
use trgs_core::estimators::hessian_batch_size;
use trgs_core::problems::{
    logistic_oracle, make_exp_scalar, make_imbalanced_mixture, make_quartic_saddle, mlp_oracle, ImbalancedDataset,
    ModelParams, ModelShape,
};
use trgs_core::{Purpose, SecondOrderConstants, SeededRng, SmoothnessProfile, StochasticOracle, Vector};

use crate::config::{ExperimentConfig, Method, ProblemKind, StopKind};

#[derive(Debug, Error)]
pub enum ExperimentError {
    /// The config is well formed but cannot be instantiated.
    #[error("configuration: {0}")]
    Config(String),
    #[error("run failed for seed {seed}: {message}")]
    Run { seed: u64, message: String },
    #[error("{0} of the seeded runs failed")]
    Failures(usize),
    #[error("i/o on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl ExperimentError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}

type Result<T> = std::result::Result<T, ExperimentError>;

/// Fixed leading columns of every trace CSV.
pub const TRACE_HEADER: [&str; 9] = ["iter", "samples", "F", "grad_norm", "tr_lambda", "delta", "step_norm", "lambda_min", "wall_ms"];

/// A problem instantiated from a config, shared by all seeds.
pub struct Problem {
    pub oracle: Box<dyn StochasticOracle>,
    /// Dimension of the model parameters (excluding `η` for DRO).
    pub n_params: usize,
    pub shape: Option<ModelShape>,
    pub test: Option<ImbalancedDataset>,
    /// Known lower bound on the objective, used for the default `Δ_F`.
    pub lower_bound: f64,
    mlp: Option<trgs_core::problems::MlpOracle>,
}

fn wrap(cfg: &ExperimentConfig, base: Box<dyn StochasticOracle>) -> Result<Box<dyn StochasticOracle>> {
    match cfg.dro {
        None => Ok(base),
        Some(d) => Ok(Box::new(
            DroDualObjective::new(base, d.conjugate, d.penalty).map_err(|e| ExperimentError::Config(e.to_string()))?,
        )),
    }
}

/// Instantiates the problem for a run seed (the seed only matters for
/// per-run datasets).
pub fn build_problem(cfg: &ExperimentConfig, seed: u64) -> Result<Problem> {
    let cfg_err = |e: trgs_core::Error| ExperimentError::Config(e.to_string());
    let datasets = |d: &crate::config::DataSpec| -> Result<(ImbalancedDataset, ImbalancedDataset)> {
        let (train_seed, test_seed) = d.seeds(seed);
        let train = make_imbalanced_mixture(d.features, d.classes, d.base_per_class, &d.ratios, train_seed).map_err(cfg_err)?;
        let test = make_imbalanced_mixture(d.features, d.classes, d.test_base, &d.ratios, test_seed).map_err(cfg_err)?;
        Ok((train, test))
    };
    Ok(match &cfg.problem.kind {
        ProblemKind::Quartic { dim, noise } => {
            let q = make_quartic_saddle(*dim, *noise).map_err(cfg_err)?;
            let lower_bound = q.optimal_value();
            Problem { oracle: Box::new(q), n_params: *dim, shape: None, test: None, lower_bound, mlp: None }
        }
        ProblemKind::Exp { dim } => Problem {
            oracle: Box::new(make_exp_scalar(*dim).map_err(cfg_err)?),
            n_params: *dim,
            shape: None,
            test: None,
            lower_bound: *dim as f64,
            mlp: None,
        },
        ProblemKind::Logistic(d) => {
            let (train, test) = datasets(d)?;
            let base = logistic_oracle(train).map_err(cfg_err)?;
            let shape = base.shape();
            Problem {
                n_params: shape.param_count(),
                oracle: wrap(cfg, Box::new(base))?,
                shape: Some(shape),
                test: Some(test),
                lower_bound: 0.0,
                mlp: None,
            }
        }
        ProblemKind::Mlp { data, hidden } => {
            let (train, test) = datasets(data)?;
            let base = mlp_oracle(train, *hidden).map_err(cfg_err)?;
            let shape = base.shape();
            Problem {
                n_params: shape.param_count(),
                oracle: wrap(cfg, Box::new(base.clone()))?,
                shape: Some(shape),
                test: Some(test),
                lower_bound: 0.0,
                mlp: Some(base),
            }
        }
    })
}

/// Starting point for `seed`; MLP weights are drawn from the seed's
/// initialization stream unless `x0` is given.
pub fn initial_point(cfg: &ExperimentConfig, problem: &Problem, seed: u64) -> Result<Vector> {
    let n = problem.n_params;
    let mut x = match (&cfg.problem.x0, &cfg.problem.kind) {
        (Some(v), _) => {
            if v.len() != n {
                return Err(ExperimentError::Config(format!("x0 has {} entries, the problem has {n} parameters", v.len())));
            }
            Vector::from_column_slice(v)
        }
        (None, ProblemKind::Quartic { dim, .. }) => {
            let mut x = Vector::from_element(*dim, 0.5);
            x[0] = 1.5;
            x
        }
        (None, ProblemKind::Exp { dim }) => Vector::from_element(*dim, 1.0),
        (None, ProblemKind::Logistic(_)) => Vector::zeros(n),
        (None, ProblemKind::Mlp { .. }) => {
            let mlp = problem.mlp.as_ref().expect("mlp problems keep their base oracle");
            mlp.init_params(&mut SeededRng::from_seed(seed).derive(Purpose::Init, 0))
        }
    };
    if let Some(d) = cfg.dro {
        x = x.resize_vertically(n + 1, 0.0);
        x[n] = d.eta0;
    }
    Ok(x)
}

/// Smoothness profile with problem defaults for unset constants.
pub fn resolve_profile(cfg: &ExperimentConfig, problem: &Problem, x0: &Vector) -> Result<SmoothnessProfile> {
    let o = cfg.algorithm.profile;
    let quartic = match cfg.problem.kind {
        ProblemKind::Quartic { dim, noise } => Some((dim, noise)),
        _ => None,
    };
    let delta_f = match o.delta_f {
        Some(v) => v,
        None => {
            let f0 = problem.oracle.full_value(x0).map_err(|e| ExperimentError::Config(format!("F(x0): {e}")))?;
            (f0 - problem.lower_bound).max(0.0)
        }
    };
    // the quartic's Hessian 3x² − 1 is bounded by 2 + 3‖∇F‖ and its noise is σ²n
    let (l0, l1, g0, g1, m0, m1, k0, k1) = match quartic {
        Some((n, s)) => (2.0, 3.0, s * (n as f64).sqrt(), 0.0, 6.0, 2.0, 0.0, 0.0),
        None => (1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0),
    };
    let p = SmoothnessProfile::first_order(
        o.l0.unwrap_or(l0),
        o.l1.unwrap_or(l1),
        o.g0.unwrap_or(g0),
        o.g1.unwrap_or(g1),
        delta_f,
    )
    .and_then(|p| {
        p.with_second_order(SecondOrderConstants {
            m0: o.m0.unwrap_or(m0),
            m1: o.m1.unwrap_or(m1),
            k0: o.k0.unwrap_or(k0),
            k1: o.k1.unwrap_or(k1),
            delta_radius: o.radius.unwrap_or(1.0),
        })
    })
    .map_err(|e| ExperimentError::Config(e.to_string()))?;
    Ok(p)
}

/// Theorem or manual schedule with overrides and the budget multiplier.
pub fn resolve_schedule(cfg: &ExperimentConfig, problem: &Problem, x0: &Vector, budget_multiplier: f64) -> Result<Schedule> {
    let a = &cfg.algorithm;
    let cfg_err = |e: trgs_core::Error| ExperimentError::Config(e.to_string());
    let n = problem.oracle.dim();
    let mut s = match a.method {
        Method::Theorem(tag) => {
            let profile = resolve_profile(cfg, problem, x0)?;
            let beta = a.beta.unwrap_or(match cfg.policy() {
                Some(BtPolicy::ScaledIdentity { rho }) => rho,
                _ => 0.0,
            });
            derive_schedule(tag, a.epsilon.expect("checked at parse time"), &profile, n, beta).map_err(cfg_err)?
        }
        Method::Manual => {
            Schedule::manual(a.epsilon.unwrap_or(0.1), a.delta.unwrap(), a.s1.unwrap(), a.iterations.unwrap()).map_err(cfg_err)?
        }
        Method::Sgd { batch, .. } => Schedule::manual(a.epsilon.unwrap_or(0.1), 1.0, batch, a.iterations.unwrap()).map_err(cfg_err)?,
    };
    if let Some(v) = a.delta {
        s.delta = v;
    }
    if let Some(v) = a.s1 {
        s.s1 = v;
    }
    if let Some(v) = a.s2 {
        s.s2 = Some(v);
    }
    if let Some(v) = a.s3 {
        s.s3 = Some(v);
    }
    if let Some(v) = a.q {
        s.q = v;
    }
    if let Some(v) = a.iterations {
        s.iterations = v;
    }
    if matches!(cfg.policy(), Some(BtPolicy::SampledHessian)) && s.s2.is_none() {
        s.s2 = Some(hessian_batch_size(s.epsilon, n));
    }
    s.scale_budget(budget_multiplier).map_err(cfg_err)
}

fn diagnostics(cfg: &ExperimentConfig) -> RunDiagnostics {
    let r = &cfg.run;
    let stop = r.stop.map(|k| {
        let epsilon = cfg.algorithm.epsilon.expect("checked at parse time");
        match k {
            StopKind::Fosp => StopRule::Fosp { epsilon },
            StopKind::Sosp => StopRule::Sosp { epsilon },
        }
    });
    RunDiagnostics {
        full_batch: r.full_batch,
        lambda_min: r.lambda_min,
        estimator_error: r.estimator_error,
        check_invariants: r.check_invariants,
        keep_iterates: cfg.is_classification(),
        timing: r.timing,
        stop,
    }
}

/// Whether the config runs the SPIDER estimator.
pub fn is_variance_reduced(cfg: &ExperimentConfig) -> bool {
    match cfg.algorithm.method {
        Method::Theorem(tag) => tag.is_variance_reduced(),
        Method::Manual => cfg.algorithm.s3.is_some(),
        Method::Sgd { .. } => false,
    }
}

/// Dispatches one run with the given schedule.
pub fn execute(
    cfg: &ExperimentConfig,
    oracle: &dyn StochasticOracle,
    schedule: &Schedule,
    x0: &Vector,
    seed: u64,
    diag: RunDiagnostics,
) -> trgs_core::Result<RunTrace> {
    let rng = SeededRng::from_seed(seed);
    match (cfg.algorithm.method, cfg.policy()) {
        (Method::Sgd { lr, momentum, batch }, _) => {
            run_sgd_baseline(oracle, lr, momentum, schedule.iterations, batch, x0, &rng, diag)
        }
        (_, Some(BtPolicy::ProjectedSubspaceHessian)) => run_drtr(oracle, schedule, x0, &rng, diag),
        (_, Some(policy)) if is_variance_reduced(cfg) => run_trust_region_vr(oracle, policy, schedule, x0, &rng, diag),
        (_, Some(policy)) => run_trust_region(oracle, policy, schedule, x0, &rng, diag),
        (_, None) => unreachable!("trust-region methods always resolve a policy"),
    }
}

#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub schedule: Schedule,
    pub trace: RunTrace,
    /// Test-set accuracy at every record (classification problems only).
    pub accuracy: Option<Vec<ClassAccuracy>>,
    pub certificate: Option<StationarityCertificate>,
}

impl SeedResult {
    pub fn failed(&self) -> bool {
        self.trace.status.is_failure()
    }
}

fn accuracies(problem: &Problem, trace: &RunTrace) -> Result<Option<Vec<ClassAccuracy>>> {
    let (Some(shape), Some(test), Some(iterates)) = (problem.shape, &problem.test, &trace.iterates) else {
        return Ok(None);
    };
    iterates
        .iter()
        .map(|z| {
            let p = ModelParams::new(z.rows(0, problem.n_params).into_owned(), shape)?;
            per_class_accuracy(&p, test)
        })
        .collect::<trgs_core::Result<Vec<_>>>()
        .map(Some)
        .map_err(|e| ExperimentError::Config(e.to_string()))
}

/// Runs one seed end to end (without writing files).
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, budget_multiplier: f64) -> Result<SeedResult> {
    let problem = &build_problem(cfg, seed)?;
    let x0 = initial_point(cfg, problem, seed)?;
    let schedule = resolve_schedule(cfg, problem, &x0, budget_multiplier)?;
    let mut trace = execute(cfg, problem.oracle.as_ref(), &schedule, &x0, seed, diagnostics(cfg))
        .map_err(|e| ExperimentError::Run { seed, message: e.to_string() })?;
    let accuracy = accuracies(problem, &trace)?;
    if !cfg.run.timing {
        debug_assert!(trace.records.iter().all(|r| r.wall_ms.is_none()));
    }
    let certificate = match cfg.algorithm.epsilon {
        Some(eps) if !trace.status.is_failure() => {
            let o = problem.oracle.as_ref();
            let second = o.capabilities().hessian && o.dim() <= MAX_CERTIFY_DIM;
            certify(o, &trace.final_x, eps, cfg.run.c1, cfg.run.c2, second).ok()
        }
        _ => None,
    };
    // iterates were only kept for the accuracy columns
    trace.iterates = None;
    Ok(SeedResult { seed, schedule, trace, accuracy, certificate })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn accuracy_header(classes: usize) -> Vec<String> {
    let mut h: Vec<String> = (0..classes).map(|k| format!("acc_class{k}")).collect();
    h.push("acc_worst".into());
    h.push("acc_overall".into());
    h
}

fn accuracy_cells(a: &ClassAccuracy) -> Vec<Option<f64>> {
    let mut v: Vec<Option<f64>> = a.per_class.iter().map(|x| if x.is_nan() { None } else { Some(*x) }).collect();
    v.push(Some(a.worst));
    v.push(Some(a.overall));
    v
}

/// Numeric cells of one record after `iter`, in header order.
fn record_cells(r: &TraceRecord, acc: Option<&ClassAccuracy>) -> Vec<Option<f64>> {
    let mut v = vec![
        Some(r.samples as f64),
        r.value,
        r.grad_norm,
        r.tr_lambda,
        r.delta,
        r.step_norm,
        r.lambda_min,
        r.wall_ms,
    ];
    if let Some(a) = acc {
        v.extend(accuracy_cells(a));
    }
    v
}

/// Writes a trace as CSV. Absent values are empty cells; reals use the
/// shortest round-trip representation.
pub fn write_trace<W: std::io::Write>(writer: W, result: &SeedResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = TRACE_HEADER.iter().map(|s| s.to_string()).collect();
    if let Some(acc) = &result.accuracy {
        header.extend(accuracy_header(acc.first().map_or(0, |a| a.per_class.len())));
    }
    w.write_record(&header)?;
    for (i, r) in result.trace.records.iter().enumerate() {
        let acc = result.accuracy.as_ref().map(|a| &a[i]);
        let mut row = vec![r.iter.to_string(), r.samples.to_string()];
        row.extend(record_cells(r, acc).into_iter().skip(1).map(cell));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| ExperimentError::Io { path: PathBuf::from("<trace>"), source: e })?;
    Ok(())
}

/// Per-iteration mean, min and max across seeds. Seeds that stopped early
/// simply drop out; the `seeds` column counts contributors.
pub fn aggregate_rows(results: &[SeedResult]) -> (Vec<String>, Vec<Vec<Option<f64>>>) {
    let mut names: Vec<String> = TRACE_HEADER[1..].iter().map(|s| s.to_string()).collect();
    if let Some(acc) = results.iter().find_map(|r| r.accuracy.as_ref()) {
        names.extend(accuracy_header(acc.first().map_or(0, |a| a.per_class.len())));
    }
    let mut header = vec!["iter".to_string(), "seeds".to_string()];
    for n in &names {
        header.extend([format!("{n}_mean"), format!("{n}_min"), format!("{n}_max")]);
    }
    let len = results.iter().map(|r| r.trace.records.len()).max().unwrap_or(0);
    let mut rows = Vec::with_capacity(len);
    for i in 0..len {
        let present: Vec<Vec<Option<f64>>> = results
            .iter()
            .filter_map(|r| {
                r.trace.records.get(i).map(|rec| record_cells(rec, r.accuracy.as_ref().map(|a| &a[i])))
            })
            .collect();
        let mut row = vec![Some(i as f64), Some(present.len() as f64)];
        for c in 0..names.len() {
            let vals: Vec<f64> = present.iter().filter_map(|p| p.get(c).copied().flatten()).collect();
            if vals.is_empty() {
                row.extend([None, None, None]);
            } else {
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
                let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                row.extend([Some(mean), Some(min), Some(max)]);
            }
        }
        rows.push(row);
    }
    (header, rows)
}

/// Averages consecutive blocks of `width` rows; the `iter` column keeps the
/// block's last iteration.
pub fn smooth_rows(rows: &[Vec<Option<f64>>], width: usize) -> Vec<Vec<Option<f64>>> {
    rows.chunks(width.max(1))
        .map(|block| {
            let cols = block[0].len();
            (0..cols)
                .map(|c| {
                    if c == 0 {
                        return block.last().unwrap()[0];
                    }
                    let vals: Vec<f64> = block.iter().filter_map(|r| r[c]).collect();
                    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
                })
                .collect()
        })
        .collect()
}

fn write_table(path: &Path, header: &[String], rows: &[Vec<Option<f64>>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        let cells: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(i, v)| match (i, v) {
                (0 | 1, Some(x)) => format!("{}", *x as u64),
                _ => cell(*v),
            })
            .collect();
        w.write_record(&cells)?;
    }
    w.flush().map_err(|e| ExperimentError::io(path, e))?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub jobs: usize,
    pub budget_multiplier: f64,
    pub smooth: Option<usize>,
    pub seed_override: Option<u64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { jobs: 1, budget_multiplier: 1.0, smooth: None, seed_override: None }
    }
}

/// Per-seed outcome line for the console and `summary.csv`.
#[derive(Debug, Clone)]
pub struct SeedSummary {
    pub seed: u64,
    pub status: String,
    pub records: usize,
    pub t_bar: usize,
    pub grad_norm_t_bar: Option<f64>,
    pub best_grad_norm: Option<f64>,
    pub last_grad_norm: Option<f64>,
    pub samples: u64,
    pub grad_samples: u64,
    pub hess_samples: u64,
    pub invariant_checks: usize,
    pub verdict: Option<String>,
    pub lambda_min: Option<f64>,
    pub worst_class: Option<f64>,
    pub overall: Option<f64>,
}

pub const SUMMARY_HEADER: [&str; 15] = [
    "seed",
    "status",
    "records",
    "t_bar",
    "grad_norm_t_bar",
    "best_grad_norm",
    "last_grad_norm",
    "samples",
    "grad_samples",
    "hess_samples",
    "invariant_checks",
    "verdict",
    "lambda_min_final",
    "acc_worst_final",
    "acc_overall_final",
];

fn status_text(s: &RunStatus) -> String {
    match s {
        RunStatus::Completed => "completed".into(),
        RunStatus::ZeroGradientStall { iteration } => format!("zero-gradient stall at {iteration}"),
        RunStatus::Stopped { iteration } => format!("stopped at {iteration}"),
        RunStatus::Failed { iteration, message } => format!("failed at {iteration}: {message}"),
    }
}

pub fn summarize(r: &SeedResult) -> SeedSummary {
    let t = &r.trace;
    let last = t.last();
    let final_acc = r.accuracy.as_ref().and_then(|a| a.last());
    SeedSummary {
        seed: r.seed,
        status: status_text(&t.status),
        records: t.records.len(),
        t_bar: t.t_bar,
        grad_norm_t_bar: t.t_bar_record().and_then(|x| x.grad_norm),
        best_grad_norm: t.best().and_then(|x| x.grad_norm),
        last_grad_norm: last.grad_norm,
        samples: last.samples,
        grad_samples: last.grad_samples,
        hess_samples: last.hess_samples,
        invariant_checks: t.invariant_checks,
        verdict: r.certificate.as_ref().map(|c| format!("{:?}", c.verdict).to_lowercase()),
        lambda_min: r.certificate.as_ref().and_then(|c| c.lambda_min),
        worst_class: final_acc.map(|a| a.worst),
        overall: final_acc.map(|a| a.overall),
    }
}

fn summary_cells(s: &SeedSummary) -> Vec<String> {
    vec![
        s.seed.to_string(),
        s.status.clone(),
        s.records.to_string(),
        s.t_bar.to_string(),
        cell(s.grad_norm_t_bar),
        cell(s.best_grad_norm),
        cell(s.last_grad_norm),
        s.samples.to_string(),
        s.grad_samples.to_string(),
        s.hess_samples.to_string(),
        s.invariant_checks.to_string(),
        s.verdict.clone().unwrap_or_default(),
        cell(s.lambda_min),
        cell(s.worst_class),
        cell(s.overall),
    ]
}

#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub seeds: Vec<SeedSummary>,
    pub files: Vec<PathBuf>,
    pub failures: usize,
}

pub fn trace_file_name(seed: u64) -> String {
    format!("trace_seed{seed}.csv")
}

/// Runs every seed, writes `trace_seed{s}.csv`, `aggregate.csv` and
/// `summary.csv` into `out`, plus `aggregate_smooth{w}.csv` with `--smooth`.
/// A failed seed keeps its partial trace next to a `.failed` marker.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path, opts: &RunOptions) -> Result<ExperimentSummary> {
    if !(opts.budget_multiplier > 0.0 && opts.budget_multiplier.is_finite()) {
        return Err(ExperimentError::Config("budget multiplier must be positive".into()));
    }
    fs::create_dir_all(out).map_err(|e| ExperimentError::io(out, e))?;
    let seeds = match opts.seed_override {
        Some(s) => vec![s],
        None => cfg.run.seeds.clone(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| ExperimentError::Config(format!("thread pool: {e}")))?;
    let outcomes: Vec<Result<SeedResult>> =
        pool.install(|| seeds.par_iter().map(|&s| run_seed(cfg, s, opts.budget_multiplier)).collect());

    let mut files = Vec::new();
    let mut results = Vec::new();
    let mut failures = 0;
    for (seed, outcome) in seeds.iter().zip(outcomes) {
        let path = out.join(trace_file_name(*seed));
        let marker = path.with_extension("csv.failed");
        match outcome {
            Ok(r) => {
                let f = fs::File::create(&path).map_err(|e| ExperimentError::io(&path, e))?;
                write_trace(std::io::BufWriter::new(f), &r)?;
                files.push(path);
                if let RunStatus::Failed { iteration, message } = &r.trace.status {
                    failures += 1;
                    fs::write(&marker, format!("iteration {iteration}: {message}\n")).map_err(|e| ExperimentError::io(&marker, e))?;
                } else if marker.exists() {
                    fs::remove_file(&marker).map_err(|e| ExperimentError::io(&marker, e))?;
                }
                results.push(r);
            }
            Err(ExperimentError::Run { seed, message }) => {
                failures += 1;
                fs::write(&marker, format!("{message}\n")).map_err(|e| ExperimentError::io(&marker, e))?;
                warn!("seed {seed}: {message}");
            }
            Err(e) => return Err(e),
        }
    }
    let (header, rows) = aggregate_rows(&results);
    let agg = out.join("aggregate.csv");
    write_table(&agg, &header, &rows)?;
    files.push(agg);
    if let Some(w) = opts.smooth {
        let p = out.join(format!("aggregate_smooth{w}.csv"));
        write_table(&p, &header, &smooth_rows(&rows, w))?;
        files.push(p);
    }
    let seeds_summary: Vec<SeedSummary> = results.iter().map(summarize).collect();
    let sp = out.join("summary.csv");
    let mut w = csv::Writer::from_path(&sp)?;
    w.write_record(SUMMARY_HEADER)?;
    for s in &seeds_summary {
        w.write_record(summary_cells(s))?;
    }
    w.flush().map_err(|e| ExperimentError::io(&sp, e))?;
    files.push(sp);
    info!("wrote {} files to {}", files.len(), out.display());
    Ok(ExperimentSummary { seeds: seeds_summary, files, failures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn quartic(extra: &str) -> ExperimentConfig {
        parse_config(&format!(
            "[problem]\nkind = quartic\nnoise = 0.1\n[algorithm]\ntag = manual\ndelta = 0.05\ns1 = 8\niterations = 40\n{extra}[run]\nseeds = 0, 1\n"
        ))
        .unwrap()
    }

    #[test]
    fn trace_csv_header_and_empty_cells() {
        let cfg = quartic("");
        let r = run_seed(&cfg, 0, 1.0).unwrap();
        let mut buf = Vec::new();
        write_trace(&mut buf, &r).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "iter,samples,F,grad_norm,tr_lambda,delta,step_norm,lambda_min,wall_ms");
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first[0], "0");
        assert_eq!(first[4], "");
        assert_eq!(first[8], "");
        assert_eq!(text.lines().count(), 42);
    }

    #[test]
    fn csv_values_round_trip() {
        let cfg = quartic("");
        let r = run_seed(&cfg, 1, 1.0).unwrap();
        let mut buf = Vec::new();
        write_trace(&mut buf, &r).unwrap();
        let mut rd = csv::Reader::from_reader(buf.as_slice());
        for (row, rec) in rd.records().zip(&r.trace.records) {
            let row = row.unwrap();
            assert_eq!(row[2].parse::<f64>().unwrap(), rec.value.unwrap());
            assert_eq!(row[3].parse::<f64>().unwrap(), rec.grad_norm.unwrap());
        }
    }

    #[test]
    fn budget_multiplier_scales_iterations() {
        let cfg = quartic("");
        let p = build_problem(&cfg, 0).unwrap();
        let x0 = initial_point(&cfg, &p, 0).unwrap();
        assert_eq!(resolve_schedule(&cfg, &p, &x0, 2.5).unwrap().iterations, 100);
    }

    #[test]
    fn aggregate_statistics() {
        let cfg = quartic("");
        let rs: Vec<_> = [0, 1].iter().map(|&s| run_seed(&cfg, s, 1.0).unwrap()).collect();
        let (header, rows) = aggregate_rows(&rs);
        assert_eq!(header[2], "samples_mean");
        let fi = header.iter().position(|h| h == "F_mean").unwrap();
        let a = rs[0].trace.records[5].value.unwrap();
        let b = rs[1].trace.records[5].value.unwrap();
        assert!((rows[5][fi].unwrap() - 0.5 * (a + b)).abs() < 1e-15);
        assert_eq!(rows[5][fi + 1], Some(a.min(b)));
        let sm = smooth_rows(&rows, 20);
        assert_eq!(sm.len(), 3);
        assert_eq!(sm[0][0], Some(19.0));
    }
}
