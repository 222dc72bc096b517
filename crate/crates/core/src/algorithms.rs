//! Run drivers: the unified trust-region loop, its SPIDER variant, the
//! dimension-reduced 2-D subspace method and a heavy-ball SGD baseline, plus
//! the theorem-derived parameter schedules.

use std::time::Instant;

use log::warn;
use nalgebra::{Matrix2, Vector2};

use crate::diagnostics::min_eigenvalue;
use crate::error::{invalid, Error, Result};
use crate::estimators::{batch_count, ceil_count, hessian_batch_size, spider_gradient, SpiderState};
use crate::oracle::{batch_gradient, batch_hessian, draw_batch, hvp, Capabilities, StochasticOracle, Vector};
use crate::profile::SmoothnessProfile;
use crate::rng::{Purpose, SeededRng};
use crate::subproblem::{
    check_report, kkt_report, kkt_report_2d, kkt_report_identity, solve_2d_metric, solve_clipped, solve_general,
    solve_normalized, MetricStep, Subproblem2D, TrustRegionStep,
};

/// Choice of the model matrix `B_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BtPolicy {
    /// `B_t = 0`: normalized steps.
    Zero,
    /// `B_t = ρI`: clipped steps.
    ScaledIdentity { rho: f64 },
    /// `B_t = H_t`, a minibatch Hessian.
    SampledHessian,
    /// `B_t` is `H_t` projected on `span{g_t, d_t}`; see [`run_drtr`].
    ProjectedSubspaceHessian,
}

impl BtPolicy {
    pub fn validate(&self, caps: Capabilities) -> Result<()> {
        if !caps.gradient {
            return Err(Error::Unsupported("oracle offers no gradients".into()));
        }
        match *self {
            BtPolicy::ScaledIdentity { rho } if !(rho > 0.0 && rho.is_finite()) => {
                Err(invalid(format!("clipping parameter rho = {rho} must be positive")))
            }
            BtPolicy::SampledHessian if !caps.hessian => {
                Err(Error::Unsupported("sampled-Hessian policy needs per-sample Hessians".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn needs_hessian(&self) -> bool {
        matches!(self, BtPolicy::SampledHessian)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TheoremTag {
    Fotrgs,
    Sotrgs,
    FotrgsVr,
    SotrgsVr,
    Drtr,
    Manual,
}

impl TheoremTag {
    pub fn name(&self) -> &'static str {
        match self {
            TheoremTag::Fotrgs => "fotrgs",
            TheoremTag::Sotrgs => "sotrgs",
            TheoremTag::FotrgsVr => "fotrgs-vr",
            TheoremTag::SotrgsVr => "sotrgs-vr",
            TheoremTag::Drtr => "drtr",
            TheoremTag::Manual => "manual",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "fotrgs" => TheoremTag::Fotrgs,
            "sotrgs" => TheoremTag::Sotrgs,
            "fotrgs-vr" => TheoremTag::FotrgsVr,
            "sotrgs-vr" => TheoremTag::SotrgsVr,
            "drtr" => TheoremTag::Drtr,
            "manual" => TheoremTag::Manual,
            _ => return None,
        })
    }

    pub fn is_variance_reduced(&self) -> bool {
        matches!(self, TheoremTag::FotrgsVr | TheoremTag::SotrgsVr)
    }

    pub fn is_second_order(&self) -> bool {
        matches!(self, TheoremTag::Sotrgs | TheoremTag::SotrgsVr | TheoremTag::Drtr)
    }
}

/// Run parameters. `s2` is present when Hessians are sampled and `s3` when
/// SPIDER corrections are used.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub tag: TheoremTag,
    pub epsilon: f64,
    pub delta: f64,
    pub s1: usize,
    pub s2: Option<usize>,
    pub s3: Option<usize>,
    pub q: usize,
    pub iterations: usize,
    /// Norm bound on `B_t` used by the first-order formulas.
    pub beta: f64,
    /// Largest `ε` for which the source theorem applies.
    pub epsilon_threshold: Option<f64>,
    pub warnings: Vec<String>,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        f64::INFINITY
    }
}

impl Schedule {
    /// Hand-specified schedule for plain trust-region runs.
    pub fn manual(epsilon: f64, delta: f64, s1: usize, iterations: usize) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) || s1 == 0 {
            return Err(invalid("manual schedule needs delta > 0 and s1 >= 1"));
        }
        Ok(Self {
            tag: TheoremTag::Manual,
            epsilon,
            delta,
            s1,
            s2: None,
            s3: None,
            q: 1,
            iterations,
            beta: 0.0,
            epsilon_threshold: None,
            warnings: Vec::new(),
        })
    }

    pub fn with_hessian_batch(mut self, s2: usize) -> Self {
        self.s2 = Some(s2.max(1));
        self
    }

    pub fn with_correction(mut self, s3: usize, q: usize) -> Self {
        self.s3 = Some(s3.max(1));
        self.q = q.max(1);
        self
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self
    }

    /// Scales `T` by `m`, ceiling the result.
    pub fn scale_budget(mut self, m: f64) -> Result<Self> {
        if !(m > 0.0 && m.is_finite()) {
            return Err(invalid("budget multiplier must be positive"));
        }
        if self.iterations > 0 {
            self.iterations = ceil_count(self.iterations as f64 * m);
        }
        Ok(self)
    }

    fn check_threshold(&mut self) {
        if let Some(th) = self.epsilon_threshold {
            if self.epsilon > th {
                let msg = format!(
                    "epsilon {} exceeds the {} threshold {th:.4e}; guarantees may not apply",
                    self.epsilon,
                    self.tag.name()
                );
                warn!("{msg}");
                self.warnings.push(msg);
            }
        }
    }
}

/// Instantiates the theorem parameters. `beta` bounds `‖B_t‖` for the
/// first-order schedule (use `ρ` for the clipped policy, 0 for normalized).
/// The `O(·)` iteration budgets use `T = ⌈4 Δ_F ε^{−p}⌉`.
pub fn derive_schedule(tag: TheoremTag, epsilon: f64, profile: &SmoothnessProfile, n: usize, beta: f64) -> Result<Schedule> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(invalid(format!("epsilon {epsilon} outside (0, 1)")));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(invalid("beta must be finite and nonnegative"));
    }
    profile.validate()?;
    let p = profile;
    let e = epsilon;
    let needs_second = || {
        p.second_order
            .ok_or_else(|| invalid(format!("{} needs the second-order constants M0, M1, K0, K1", tag.name())))
    };
    let mut s = Schedule {
        tag,
        epsilon,
        delta: 0.0,
        s1: 1,
        s2: None,
        s3: None,
        q: 1,
        iterations: 0,
        beta,
        epsilon_threshold: None,
        warnings: Vec::new(),
    };
    match tag {
        TheoremTag::Fotrgs => {
            s.delta = e / (4.0 * p.l0 + 16.0 * beta);
            s.s1 = batch_count(64.0 * p.g0 * p.g0 / (e * e), "S1");
            s.iterations = ceil_count(32.0 * p.delta_f * (p.l0 + 4.0 * beta) / (e * e));
            let a = ratio(4.0 * p.l0 * p.g0 + 16.0 * beta * p.g0, p.l1 * p.g0 + 2.0 * p.l0 * p.g1 + 8.0 * beta * p.g1);
            let b = ratio(4.0 * p.l0 + 16.0 * beta, p.l1);
            s.epsilon_threshold = Some(a.min(b));
        }
        TheoremTag::Sotrgs | TheoremTag::Drtr => {
            let c = needs_second()?;
            s.delta = e.sqrt();
            s.s1 = batch_count(1.0 / (e * e), "S1");
            s.s2 = Some(hessian_batch_size(e, n));
            s.iterations = ceil_count(4.0 * p.delta_f * e.powf(-1.5));
            let k = if tag == TheoremTag::Sotrgs { 12.0 } else { 24.0 };
            let a = ratio(3.0, 5.0 * c.m1 + 18.0 * p.g1 + k * c.k1);
            s.epsilon_threshold = Some(a.min(ratio(1.0, p.l1 * p.l1)));
        }
        TheoremTag::FotrgsVr => {
            if !(p.g1 > 0.0) {
                return Err(invalid("fotrgs-vr needs G1 > 0 for its restart period"));
            }
            s.delta = e;
            s.s1 = batch_count(1.0 / (e * e), "S1");
            s.s3 = Some(batch_count(1.0 / e, "S3"));
            s.q = ceil_count(1.0 / (8.0 * p.g1 * e));
            s.iterations = ceil_count(4.0 * p.delta_f / (e * e));
            let a = ratio(p.g1 * p.g1, 2.0 * p.l1 * p.l1);
            s.epsilon_threshold = Some(a.min(ratio(1.0, p.l1)));
        }
        TheoremTag::SotrgsVr => {
            needs_second()?;
            s.delta = e.sqrt();
            s.s1 = batch_count(1.0 / (e * e), "S1");
            s.s2 = Some(hessian_batch_size(e, n));
            s.s3 = Some(batch_count(e.powf(-1.5), "S3"));
            s.q = ceil_count(e.powf(-0.5));
            s.iterations = ceil_count(4.0 * p.delta_f * e.powf(-1.5));
            let l4 = p.l1.powi(4);
            let a = ratio(p.g1.powi(4), 4.0 * l4).min(ratio(1.0, 36.0 * p.g1 * p.g1));
            s.epsilon_threshold = Some(a.min(ratio(1.0, p.l1 * p.l1)));
        }
        TheoremTag::Manual => return Err(invalid("manual schedules are built with Schedule::manual")),
    }
    s.check_threshold();
    Ok(s)
}

/// Early termination on a full-batch certificate (`c1 = c2 = 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    Fosp { epsilon: f64 },
    Sosp { epsilon: f64 },
}

/// Which diagnostics a run computes. Diagnostic evaluations are full-batch
/// and are not counted as algorithmic samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunDiagnostics {
    /// Record `F(x_t)` and `‖∇F(x_t)‖`.
    pub full_batch: bool,
    /// Record `λ_min(∇²F(x_t))` (analytic-Hessian oracles only).
    pub lambda_min: bool,
    /// Record `‖g_t − ∇F(x_t)‖²` for the estimate used at each step.
    pub estimator_error: bool,
    /// Verify the optimality system and the model-decrease inequality at
    /// every step; a violation fails the run.
    pub check_invariants: bool,
    /// Keep every iterate in the trace.
    pub keep_iterates: bool,
    /// Record wall-clock milliseconds (makes traces nondeterministic).
    pub timing: bool,
    pub stop: Option<StopRule>,
}

impl Default for RunDiagnostics {
    fn default() -> Self {
        Self {
            full_batch: true,
            lambda_min: false,
            estimator_error: false,
            check_invariants: true,
            keep_iterates: false,
            timing: false,
            stop: None,
        }
    }
}

/// One row of a trace. Record `t` describes the state `x_t`; the step fields
/// describe the step that produced it from `x_{t−1}`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceRecord {
    pub iter: usize,
    /// Cumulative algorithmic samples (gradient plus Hessian).
    pub samples: u64,
    pub grad_samples: u64,
    pub hess_samples: u64,
    pub value: Option<f64>,
    pub grad_norm: Option<f64>,
    pub tr_lambda: Option<f64>,
    pub delta: Option<f64>,
    pub step_norm: Option<f64>,
    /// Full-Hessian `λ_min` for trust-region runs; for the subspace method
    /// the curvature of the projected model.
    pub lambda_min: Option<f64>,
    pub wall_ms: Option<f64>,
    /// `‖g − ∇F‖²` of the estimate used for the step into this record.
    pub est_error: Option<f64>,
    /// `m(d) − m(0)` of that step.
    pub model_decrease: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    /// A normalized step met an exactly zero gradient.
    ZeroGradientStall { iteration: usize },
    /// The stop rule was satisfied.
    Stopped { iteration: usize },
    Failed { iteration: usize, message: String },
}

impl RunStatus {
    pub fn is_failure(&self) -> bool {
        matches!(self, RunStatus::Failed { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
    pub final_x: Vector,
    pub status: RunStatus,
    /// Uniform random output index in `0..T`.
    pub t_bar: usize,
    pub x_t_bar: Vector,
    /// Number of steps whose optimality and decrease checks passed.
    pub invariant_checks: usize,
    pub iterates: Option<Vec<Vector>>,
}

impl RunTrace {
    pub fn last(&self) -> &TraceRecord {
        self.records.last().expect("trace always has the initial record")
    }

    /// Record with the smallest recorded gradient norm.
    pub fn best(&self) -> Option<&TraceRecord> {
        self.records
            .iter()
            .filter(|r| r.grad_norm.is_some())
            .min_by(|a, b| a.grad_norm.unwrap().total_cmp(&b.grad_norm.unwrap()))
    }

    pub fn t_bar_record(&self) -> Option<&TraceRecord> {
        self.records.get(self.t_bar)
    }

    /// First record whose gradient norm is at most `eps`.
    pub fn first_below(&self, eps: f64) -> Option<&TraceRecord> {
        self.records.iter().find(|r| r.grad_norm.is_some_and(|g| g <= eps))
    }
}

/// Mutable bookkeeping shared by the drivers.
struct Recorder<'a, O: ?Sized> {
    oracle: &'a O,
    diag: RunDiagnostics,
    start: Instant,
    records: Vec<TraceRecord>,
    grad_samples: u64,
    hess_samples: u64,
    checks: usize,
    iterates: Option<Vec<Vector>>,
}

impl<'a, O: StochasticOracle + ?Sized> Recorder<'a, O> {
    fn new(oracle: &'a O, diag: RunDiagnostics) -> Self {
        Self {
            oracle,
            diag,
            start: Instant::now(),
            records: Vec::new(),
            grad_samples: 0,
            hess_samples: 0,
            checks: 0,
            iterates: diag.keep_iterates.then(Vec::new),
        }
    }

    fn lambda_min_at(&self, x: &Vector) -> Option<f64> {
        if !(self.diag.lambda_min && self.oracle.capabilities().hessian) {
            return None;
        }
        self.oracle.full_hessian(x).ok().map(|h| min_eigenvalue(&h))
    }

    /// Appends a record for `x`; returns whether the stop rule fired.
    fn push(&mut self, x: &Vector, mut rec: TraceRecord) -> bool {
        rec.iter = self.records.len();
        rec.grad_samples = self.grad_samples;
        rec.hess_samples = self.hess_samples;
        rec.samples = self.grad_samples + self.hess_samples;
        if self.diag.full_batch || self.diag.stop.is_some() {
            rec.value = self.oracle.full_value(x).ok();
            rec.grad_norm = self.oracle.full_gradient(x).ok().map(|g| g.norm());
        }
        let want_curvature = matches!(self.diag.stop, Some(StopRule::Sosp { .. }));
        if rec.lambda_min.is_none() && (self.diag.lambda_min || want_curvature) {
            rec.lambda_min = if want_curvature && !self.diag.lambda_min {
                self.oracle.full_hessian(x).ok().map(|h| min_eigenvalue(&h))
            } else {
                self.lambda_min_at(x)
            };
        }
        if self.diag.timing {
            rec.wall_ms = Some(self.start.elapsed().as_secs_f64() * 1e3);
        }
        let stop = match (self.diag.stop, rec.grad_norm) {
            (Some(StopRule::Fosp { epsilon }), Some(g)) => g <= epsilon,
            (Some(StopRule::Sosp { epsilon }), Some(g)) => {
                g <= epsilon && rec.lambda_min.is_some_and(|l| l >= -epsilon.sqrt())
            }
            _ => false,
        };
        if !self.diag.full_batch {
            rec.value = None;
            rec.grad_norm = None;
        }
        if !self.diag.lambda_min && want_curvature {
            rec.lambda_min = None;
        }
        if let Some(it) = self.iterates.as_mut() {
            it.push(x.clone());
        }
        self.records.push(rec);
        stop
    }

    fn est_error(&self, x: &Vector, g: &Vector) -> Option<f64> {
        if !self.diag.estimator_error {
            return None;
        }
        self.oracle.full_gradient(x).ok().map(|f| (g - f).norm_squared())
    }

    fn finish(self, x: Vector, status: RunStatus, t_bar: usize, x_t_bar: Option<Vector>) -> RunTrace {
        RunTrace {
            records: self.records,
            x_t_bar: x_t_bar.unwrap_or_else(|| x.clone()),
            final_x: x,
            status,
            t_bar,
            invariant_checks: self.checks,
            iterates: self.iterates,
        }
    }
}

fn check_start(oracle: &(impl StochasticOracle + ?Sized), x0: &Vector) -> Result<()> {
    if x0.len() != oracle.dim() {
        return Err(invalid(format!("x0 has length {}, oracle dimension is {}", x0.len(), oracle.dim())));
    }
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(invalid("x0 must be finite"));
    }
    Ok(())
}

fn draw_t_bar(rng: &SeededRng, iterations: usize) -> usize {
    if iterations == 0 {
        0
    } else {
        rng.derive(Purpose::OutputIndex, 0).uniform_index(iterations)
    }
}

enum StepOutcome {
    Step(TrustRegionStep),
    Stall,
}

/// Solves the subproblem for the given policy, drawing `S2` when needed, and
/// optionally checks the optimality system.
fn policy_step<O: StochasticOracle + ?Sized>(
    rec: &mut Recorder<'_, O>,
    policy: BtPolicy,
    schedule: &Schedule,
    x: &Vector,
    g: &Vector,
    rng: &SeededRng,
    t: usize,
) -> Result<StepOutcome> {
    let delta = schedule.delta;
    let step = match policy {
        BtPolicy::Zero => match solve_normalized(g, delta) {
            Ok(s) => s,
            Err(Error::DegenerateGradient) => return Ok(StepOutcome::Stall),
            Err(e) => return Err(e),
        },
        BtPolicy::ScaledIdentity { rho } => solve_clipped(g, rho, delta)?,
        BtPolicy::SampledHessian => {
            let s2 = schedule.s2.ok_or_else(|| invalid("sampled-Hessian policy needs an S2 batch size"))?;
            let batch = draw_batch(rec.oracle, s2, &mut rng.derive(Purpose::HessianBatch, t as u64))?;
            let h = batch_hessian(rec.oracle, x, &batch)?;
            rec.hess_samples += s2 as u64;
            let step = solve_general(g, &h, delta)?;
            if rec.diag.check_invariants {
                check_report(kkt_report(g, &h, delta, &step))?;
                rec.checks += 1;
            }
            return Ok(StepOutcome::Step(step));
        }
        BtPolicy::ProjectedSubspaceHessian => {
            return Err(invalid("the projected-subspace policy is run by run_drtr"));
        }
    };
    if rec.diag.check_invariants {
        let rho = match policy {
            BtPolicy::ScaledIdentity { rho } => rho,
            _ => 0.0,
        };
        check_report(kkt_report_identity(g, rho, delta, &step))?;
        rec.checks += 1;
    }
    Ok(StepOutcome::Step(step))
}

enum GradientSource {
    Fresh,
    Spider(SpiderState),
}

fn run_loop<O: StochasticOracle + ?Sized>(
    oracle: &O,
    policy: BtPolicy,
    schedule: &Schedule,
    x0: &Vector,
    rng: &SeededRng,
    diag: RunDiagnostics,
    mut source: GradientSource,
) -> Result<RunTrace> {
    check_start(oracle, x0)?;
    policy.validate(oracle.capabilities())?;
    let t_total = schedule.iterations;
    let t_bar = draw_t_bar(rng, t_total);
    let mut rec = Recorder::new(oracle, diag);
    let mut x = x0.clone();
    let mut x_t_bar = None;
    if rec.push(&x, TraceRecord::default()) {
        return Ok(rec.finish(x, RunStatus::Stopped { iteration: 0 }, t_bar, None));
    }
    let mut status = RunStatus::Completed;
    for t in 0..t_total {
        if t == t_bar {
            x_t_bar = Some(x.clone());
        }
        let outcome = (|| -> Result<(Vector, StepOutcome)> {
            let g = match &mut source {
                GradientSource::Fresh => {
                    let batch = draw_batch(oracle, schedule.s1, &mut rng.derive(Purpose::GradientBatch, t as u64))?;
                    rec.grad_samples += schedule.s1 as u64;
                    batch_gradient(oracle, &x, &batch)?
                }
                GradientSource::Spider(state) => {
                    let s3 = schedule.s3.ok_or_else(|| invalid("variance-reduced runs need an S3 batch size"))?;
                    let purpose = if state.next_is_restart() { Purpose::GradientBatch } else { Purpose::CorrectionBatch };
                    let out = spider_gradient(state, oracle, &x, schedule.s1, s3, &mut rng.derive(purpose, t as u64))?;
                    rec.grad_samples += out.samples_used as u64;
                    out.g
                }
            };
            let step = policy_step(&mut rec, policy, schedule, &x, &g, rng, t)?;
            Ok((g, step))
        })();
        let (g, step) = match outcome {
            Ok(v) => v,
            Err(e) => {
                status = RunStatus::Failed { iteration: t, message: e.to_string() };
                break;
            }
        };
        let step = match step {
            StepOutcome::Step(s) => s,
            StepOutcome::Stall => {
                status = RunStatus::ZeroGradientStall { iteration: t };
                break;
            }
        };
        let est_error = rec.est_error(&x, &g);
        x += &step.d;
        let record = TraceRecord {
            tr_lambda: Some(step.tr_multiplier),
            delta: Some(schedule.delta),
            step_norm: Some(step.step_norm()),
            est_error,
            model_decrease: Some(step.model_decrease),
            ..Default::default()
        };
        if rec.push(&x, record) {
            status = RunStatus::Stopped { iteration: t + 1 };
            break;
        }
    }
    Ok(rec.finish(x, status, t_bar, x_t_bar))
}

/// The unified trust-region loop with a fresh `S1` gradient each step.
pub fn run_trust_region<O: StochasticOracle + ?Sized>(
    oracle: &O,
    policy: BtPolicy,
    schedule: &Schedule,
    x0: &Vector,
    rng: &SeededRng,
    diag: RunDiagnostics,
) -> Result<RunTrace> {
    run_loop(oracle, policy, schedule, x0, rng, diag, GradientSource::Fresh)
}

/// The trust-region loop with SPIDER gradients restarted every `q` steps.
/// Hessians, when the policy needs them, are drawn fresh each step.
pub fn run_trust_region_vr<O: StochasticOracle + ?Sized>(
    oracle: &O,
    policy: BtPolicy,
    schedule: &Schedule,
    x0: &Vector,
    rng: &SeededRng,
    diag: RunDiagnostics,
) -> Result<RunTrace> {
    if schedule.s3.is_none() {
        return Err(invalid("variance-reduced runs need an S3 batch size"));
    }
    let state = SpiderState::new(schedule.q)?;
    run_loop(oracle, policy, schedule, x0, rng, diag, GradientSource::Spider(state))
}

/// One step of the subspace method: the 2-D (or 1-D fallback) model and
/// its solution.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceStep {
    pub problem: Subproblem2D,
    pub solution: MetricStep,
    /// Step `−α¹g + α²d`.
    pub d: Vector,
    /// The 1-D model along `−g` was used.
    pub fallback: bool,
    /// Smallest eigenvalue of `Q` relative to `G`.
    pub curvature: f64,
}

/// Builds and solves the subspace model given `g`, momentum `d`, `Hg` and `Hd`.
pub fn subspace_step(g: &Vector, d: &Vector, hg: &Vector, hd: &Vector, delta: f64) -> Result<SubspaceStep> {
    let gg = g.dot(g);
    if gg == 0.0 {
        return Err(Error::DegenerateGradient);
    }
    let q = Matrix2::new(g.dot(hg), -d.dot(hg), -d.dot(hg), d.dot(hd));
    let c = Vector2::new(-gg, g.dot(d));
    let gm = Matrix2::new(gg, -g.dot(d), -g.dot(d), d.dot(d));
    let problem = Subproblem2D { q, c, g: gm, delta };
    if d.dot(d) > 0.0 {
        match solve_2d_metric(&problem) {
            Ok(solution) => {
                let step = -g * solution.alpha[0] + d * solution.alpha[1];
                let curvature = relative_min_eigenvalue(&problem);
                return Ok(SubspaceStep { problem, solution, d: step, fallback: false, curvature });
            }
            Err(Error::DegenerateSubspace(_)) => {}
            Err(e) => return Err(e),
        }
    }
    // 1-D model along −g: α² is fixed at zero
    let gnorm = gg.sqrt();
    let qw = q[(0, 0)] / gg;
    let one = solve_general(&Vector::from_element(1, -gnorm), &crate::oracle::Matrix::from_element(1, 1, qw), delta)?;
    let a1 = one.d[0] / gnorm;
    let alpha = Vector2::new(a1, 0.0);
    let problem = Subproblem2D {
        q: Matrix2::new(q[(0, 0)], 0.0, 0.0, 0.0),
        c: Vector2::new(-gg, 0.0),
        g: Matrix2::new(gg, 0.0, 0.0, 0.0),
        delta,
    };
    let solution = MetricStep { model_value: problem.model_value(&alpha), alpha, tr_multiplier: one.tr_multiplier };
    Ok(SubspaceStep { problem, solution, d: -g * a1, fallback: true, curvature: qw })
}

fn relative_min_eigenvalue(p: &Subproblem2D) -> f64 {
    let (g11, g12, g22) = (p.g[(0, 0)], p.g[(0, 1)], p.g[(1, 1)]);
    let r11 = g11.sqrt();
    let r12 = g12 / r11;
    let r22 = (g22 - r12 * r12).max(0.0).sqrt();
    let r_inv = Matrix2::new(1.0 / r11, -r12 / (r11 * r22), 0.0, 1.0 / r22);
    let w = r_inv.transpose() * p.q * r_inv;
    ((w + w.transpose()) * 0.5).symmetric_eigenvalues().min()
}

/// The dimension-reduced trust-region method over `span{g_t, d_t}` with
/// `d_t = x_t − x_{t−1}`. Needs only two Hessian-vector products per step.
/// The momentum is reset after two consecutive degenerate subspaces.
pub fn run_drtr<O: StochasticOracle + ?Sized>(
    oracle: &O,
    schedule: &Schedule,
    x0: &Vector,
    rng: &SeededRng,
    diag: RunDiagnostics,
) -> Result<RunTrace> {
    check_start(oracle, x0)?;
    let s2 = schedule.s2.ok_or_else(|| invalid("the subspace method needs an S2 batch size"))?;
    let t_total = schedule.iterations;
    let t_bar = draw_t_bar(rng, t_total);
    let mut rec = Recorder::new(oracle, diag);
    let mut x = x0.clone();
    let mut x_t_bar = None;
    let mut momentum = Vector::zeros(x.len());
    let mut degenerate_run = 0;
    if rec.push(&x, TraceRecord::default()) {
        return Ok(rec.finish(x, RunStatus::Stopped { iteration: 0 }, t_bar, None));
    }
    let mut status = RunStatus::Completed;
    for t in 0..t_total {
        if t == t_bar {
            x_t_bar = Some(x.clone());
        }
        let outcome = (|| -> Result<Option<(Vector, SubspaceStep)>> {
            let batch = draw_batch(oracle, schedule.s1, &mut rng.derive(Purpose::GradientBatch, t as u64))?;
            rec.grad_samples += schedule.s1 as u64;
            let g = batch_gradient(oracle, &x, &batch)?;
            if g.iter().all(|&v| v == 0.0) {
                return Ok(None);
            }
            let hbatch = draw_batch(oracle, s2, &mut rng.derive(Purpose::HessianBatch, t as u64))?;
            rec.hess_samples += s2 as u64;
            let hg = hvp(oracle, &x, &g, &hbatch)?;
            let hd = hvp(oracle, &x, &momentum, &hbatch)?;
            let step = subspace_step(&g, &momentum, &hg, &hd, schedule.delta)?;
            if rec.diag.check_invariants {
                check_report(kkt_report_2d(&step.problem, &step.solution))?;
                rec.checks += 1;
            }
            Ok(Some((g, step)))
        })();
        let (g, step) = match outcome {
            Ok(Some(v)) => v,
            Ok(None) => {
                status = RunStatus::ZeroGradientStall { iteration: t };
                break;
            }
            Err(e) => {
                status = RunStatus::Failed { iteration: t, message: e.to_string() };
                break;
            }
        };
        let est_error = rec.est_error(&x, &g);
        if step.fallback && momentum.iter().any(|&v| v != 0.0) {
            degenerate_run += 1;
        } else {
            degenerate_run = 0;
        }
        x += &step.d;
        momentum = if degenerate_run >= 2 {
            degenerate_run = 0;
            Vector::zeros(x.len())
        } else {
            step.d.clone()
        };
        let record = TraceRecord {
            tr_lambda: Some(step.solution.tr_multiplier),
            delta: Some(schedule.delta),
            step_norm: Some(step.d.norm()),
            lambda_min: Some(step.curvature),
            est_error,
            model_decrease: Some(step.solution.model_value),
            ..Default::default()
        };
        if rec.push(&x, record) {
            status = RunStatus::Stopped { iteration: t + 1 };
            break;
        }
    }
    Ok(rec.finish(x, status, t_bar, x_t_bar))
}

/// Heavy-ball SGD: `v ← μv + g`, `x ← x − ηv`.
#[allow(clippy::too_many_arguments)]
pub fn run_sgd_baseline<O: StochasticOracle + ?Sized>(
    oracle: &O,
    lr: f64,
    momentum: f64,
    iterations: usize,
    batch_size: usize,
    x0: &Vector,
    rng: &SeededRng,
    diag: RunDiagnostics,
) -> Result<RunTrace> {
    check_start(oracle, x0)?;
    if !(lr >= 0.0 && lr.is_finite()) || !(0.0..1.0).contains(&momentum) || batch_size == 0 {
        return Err(invalid("need lr >= 0, momentum in [0, 1) and a positive batch size"));
    }
    let t_bar = draw_t_bar(rng, iterations);
    let mut rec = Recorder::new(oracle, diag);
    let mut x = x0.clone();
    let mut x_t_bar = None;
    let mut v = Vector::zeros(x.len());
    if rec.push(&x, TraceRecord::default()) {
        return Ok(rec.finish(x, RunStatus::Stopped { iteration: 0 }, t_bar, None));
    }
    let mut status = RunStatus::Completed;
    for t in 0..iterations {
        if t == t_bar {
            x_t_bar = Some(x.clone());
        }
        let g = match draw_batch(oracle, batch_size, &mut rng.derive(Purpose::Baseline, t as u64))
            .and_then(|b| batch_gradient(oracle, &x, &b))
        {
            Ok(g) => g,
            Err(e) => {
                status = RunStatus::Failed { iteration: t, message: e.to_string() };
                break;
            }
        };
        rec.grad_samples += batch_size as u64;
        let est_error = rec.est_error(&x, &g);
        v = v * momentum + &g;
        let d = &v * -lr;
        x += &d;
        let record = TraceRecord { step_norm: Some(d.norm()), est_error, ..Default::default() };
        if rec.push(&x, record) {
            status = RunStatus::Stopped { iteration: t + 1 };
            break;
        }
    }
    Ok(rec.finish(x, status, t_bar, x_t_bar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::Matrix;
    use crate::problems::{make_quadratic, make_quartic_saddle};
    use crate::profile::SecondOrderConstants;

    fn profile() -> SmoothnessProfile {
        SmoothnessProfile::first_order(1.0, 0.0, 1.0, 1.0, 1.0).unwrap()
    }

    fn second() -> SmoothnessProfile {
        profile()
            .with_second_order(SecondOrderConstants { m0: 1.0, m1: 0.0, k0: 1.0, k1: 0.0, delta_radius: 1.0 })
            .unwrap()
    }

    #[test]
    fn schedule_examples() {
        let s = derive_schedule(TheoremTag::Fotrgs, 0.1, &profile(), 4, 0.0).unwrap();
        assert!((s.delta - 0.025).abs() < 1e-15);
        assert_eq!(s.s1, 6400);
        let s = derive_schedule(TheoremTag::Sotrgs, 0.01, &second(), 10, 0.0).unwrap();
        assert!((s.delta - 0.1).abs() < 1e-15);
        assert_eq!(s.s1, 10_000);
        assert_eq!(s.s2, Some(5066));
        let s = derive_schedule(TheoremTag::FotrgsVr, 0.05, &profile(), 4, 0.0).unwrap();
        assert_eq!((s.q, s.s3), (3, Some(20)));
        assert!(derive_schedule(TheoremTag::Sotrgs, 0.01, &profile(), 4, 0.0).is_err());
        assert!(derive_schedule(TheoremTag::Fotrgs, 1.5, &profile(), 4, 0.0).is_err());
    }

    #[test]
    fn threshold_violation_warns() {
        let p = SmoothnessProfile::first_order(1.0, 10.0, 1.0, 1.0, 1.0).unwrap();
        let s = derive_schedule(TheoremTag::Fotrgs, 0.9, &p, 2, 0.0).unwrap();
        assert_eq!(s.warnings.len(), 1);
    }

    #[test]
    fn zero_iterations_keeps_x0() {
        let q = make_quartic_saddle(3, 0.0).unwrap();
        let x0 = Vector::from_vec(vec![0.5, 0.5, 0.5]);
        let s = Schedule::manual(0.1, 0.1, 1, 0).unwrap();
        let tr = run_trust_region(&q, BtPolicy::Zero, &s, &x0, &SeededRng::from_seed(0), RunDiagnostics::default()).unwrap();
        assert_eq!(tr.records.len(), 1);
        assert_eq!(tr.final_x, x0);
    }

    #[test]
    fn newton_on_quadratic_is_exact() {
        let f = make_quadratic(Matrix::identity(3, 3), None).unwrap();
        let x0 = Vector::from_vec(vec![1.0, -2.0, 0.5]);
        let s = Schedule::manual(0.1, 100.0, 1, 1).unwrap().with_hessian_batch(1);
        let tr = run_trust_region(&f, BtPolicy::SampledHessian, &s, &x0, &SeededRng::from_seed(0), RunDiagnostics::default())
            .unwrap();
        assert_eq!(tr.last().grad_norm, Some(0.0));
    }

    #[test]
    fn normalized_steps_have_radius_length() {
        let q = make_quartic_saddle(3, 0.0).unwrap();
        let x0 = Vector::from_vec(vec![1.5, 0.3, -0.7]);
        let s = Schedule::manual(0.1, 0.05, 1, 30).unwrap();
        let tr = run_trust_region(&q, BtPolicy::Zero, &s, &x0, &SeededRng::from_seed(0), RunDiagnostics::default()).unwrap();
        for r in &tr.records[1..] {
            assert!((r.step_norm.unwrap() - 0.05).abs() < 1e-15);
        }
        assert_eq!(tr.invariant_checks, 30);
    }

    #[test]
    fn saddle_stall_and_escape() {
        let q = make_quartic_saddle(4, 0.0).unwrap();
        let x0 = Vector::zeros(4);
        let s = Schedule::manual(0.01, 0.1, 4, 100).unwrap().with_hessian_batch(4);
        let rng = SeededRng::from_seed(1);
        let tr = run_trust_region(&q, BtPolicy::Zero, &s, &x0, &rng, RunDiagnostics::default()).unwrap();
        assert_eq!(tr.status, RunStatus::ZeroGradientStall { iteration: 0 });
        let diag = RunDiagnostics { lambda_min: true, stop: Some(StopRule::Sosp { epsilon: 0.01 }), ..Default::default() };
        let tr = run_trust_region(&q, BtPolicy::SampledHessian, &s, &x0, &rng, diag).unwrap();
        assert!(matches!(tr.status, RunStatus::Stopped { .. }), "{:?}", tr.status);
        assert!(tr.last().lambda_min.unwrap() >= -0.1);
    }

    #[test]
    fn vr_with_unit_period_matches_plain() {
        let q = make_quartic_saddle(3, 0.5).unwrap();
        let x0 = Vector::from_vec(vec![1.0, 1.0, 1.0]);
        let s = Schedule::manual(0.1, 0.05, 8, 20).unwrap().with_correction(3, 1);
        let rng = SeededRng::from_seed(5);
        let a = run_trust_region(&q, BtPolicy::Zero, &s, &x0, &rng, RunDiagnostics::default()).unwrap();
        let b = run_trust_region_vr(&q, BtPolicy::Zero, &s, &x0, &rng, RunDiagnostics::default()).unwrap();
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn vr_sample_accounting() {
        let q = make_quartic_saddle(3, 0.5).unwrap();
        let x0 = Vector::from_vec(vec![1.0, 1.0, 1.0]);
        let (t, q_period, s1, s2, s3) = (23usize, 5usize, 40usize, 7usize, 9usize);
        let s = Schedule::manual(0.1, 0.05, s1, t).unwrap().with_correction(s3, q_period).with_hessian_batch(s2);
        let tr = run_trust_region_vr(&q, BtPolicy::SampledHessian, &s, &x0, &SeededRng::from_seed(2), RunDiagnostics::default())
            .unwrap();
        let restarts = t.div_ceil(q_period);
        let expected = restarts * s1 + (t - restarts) * s3 + t * s2;
        assert_eq!(tr.last().samples, expected as u64);
        assert!(tr.records.windows(2).all(|w| w[1].samples > w[0].samples));
    }

    #[test]
    fn drtr_first_step_is_one_dimensional() {
        let a = Matrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let f = make_quadratic(a.clone(), None).unwrap();
        let g = Vector::from_vec(vec![1.0, 0.0]);
        let hg = &a * &g;
        let st = subspace_step(&g, &Vector::zeros(2), &hg, &Vector::zeros(2), 10.0).unwrap();
        assert!(st.fallback);
        let full = solve_general(&g, &a, 10.0).unwrap();
        assert!((st.d - full.d).norm() < 1e-14);
        let _ = f;
    }

    #[test]
    fn sgd_baseline_behaviour() {
        let a = Matrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let f = make_quadratic(a, None).unwrap();
        let x0 = Vector::from_vec(vec![1.0, -1.0]);
        let rng = SeededRng::from_seed(3);
        let tr = run_sgd_baseline(&f, 0.0, 0.5, 10, 1, &x0, &rng, RunDiagnostics::default()).unwrap();
        assert!(tr.records.iter().all(|r| r.value == tr.records[0].value));
        let tr = run_sgd_baseline(&f, 0.5, 0.0, 30, 1, &x0, &rng, RunDiagnostics::default()).unwrap();
        assert!(tr.records.windows(2).all(|w| w[1].value.unwrap() < w[0].value.unwrap()));
        let again = run_sgd_baseline(&f, 0.5, 0.0, 30, 1, &x0, &rng, RunDiagnostics::default()).unwrap();
        assert_eq!(tr, again);
    }
}
