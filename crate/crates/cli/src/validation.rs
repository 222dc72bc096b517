//! Validation suites. Each suite checks one property against an independent
//! reference (brute force, closed forms, finite differences, Monte Carlo)
//! and reports pass or fail with a one-line detail.

use std::time::{Duration, Instant};

use trgs_core::algorithms::{run_drtr, BtPolicy, RunDiagnostics, RunStatus, Schedule};
use trgs_core::diagnostics::{
    fd_gradient, fd_jacobian, fd_validate, hessian_concentration_trial, max_relative_deviation, min_eigenvalue, FdOrder,
};
use trgs_core::dro::{dro_hessian, dro_value_grad, minimize_eta, psi_stationarity, Conjugate, DroDualObjective, PSI_ETA_TOL};
use trgs_core::problems::{
    logistic_oracle, make_exp_scalar, make_imbalanced_mixture, make_quadratic, make_quartic_saddle, mlp_oracle,
    LogisticOracle,
};
use trgs_core::subproblem::{kkt_report, model_value};
use trgs_core::{
    solve_clipped, solve_general, solve_normalized, Batch, Capabilities, Matrix, Purpose, SampleCount, SampleId,
    SeededRng, StochasticOracle, Vector,
};

use crate::config::{parse_config, ExperimentConfig};
use crate::experiment::{build_problem, execute, initial_point, resolve_schedule, run_seed};
use crate::matched::matched_sample_comparison;

/// Shipped configurations, embedded so the binary validates them anywhere.
pub const SHIPPED_CONFIGS: [(&str, &str); 11] = [
    ("exp_clipped", include_str!("../../../configs/exp_clipped.conf")),
    ("fairness_dro", include_str!("../../../configs/fairness_dro.conf")),
    ("fairness_erm", include_str!("../../../configs/fairness_erm.conf")),
    ("mlp_fotrgs", include_str!("../../../configs/mlp_fotrgs.conf")),
    ("quartic_drtr", include_str!("../../../configs/quartic_drtr.conf")),
    ("quartic_fotrgs", include_str!("../../../configs/quartic_fotrgs.conf")),
    ("quartic_fotrgs_vr", include_str!("../../../configs/quartic_fotrgs_vr.conf")),
    ("quartic_sotrgs", include_str!("../../../configs/quartic_sotrgs.conf")),
    ("quartic_sotrgs_vr", include_str!("../../../configs/quartic_sotrgs_vr.conf")),
    ("saddle_fotrgs", include_str!("../../../configs/saddle_fotrgs.conf")),
    ("saddle_sotrgs", include_str!("../../../configs/saddle_sotrgs.conf")),
];

pub fn shipped_config(name: &str) -> ExperimentConfig {
    let text = SHIPPED_CONFIGS.iter().find(|(n, _)| *n == name).expect("known config").1;
    parse_config(text).unwrap_or_else(|e| panic!("shipped config {name}: {e}"))
}

#[derive(Debug, Clone)]
pub struct Check {
    pub suite: &'static str,
    pub pass: bool,
    pub detail: String,
    pub elapsed: Duration,
}

/// Suite names in execution order.
pub const SUITES: [&str; 12] = [
    "subproblem",
    "corollary",
    "invariants",
    "dro",
    "psi",
    "concentration",
    "saddle",
    "spider",
    "schedules",
    "fairness",
    "drtr",
    "fd",
];

/// Soft budget for `all`; exceeding it only warns.
pub const ALL_SOFT_BUDGET: Duration = Duration::from_secs(300);

/// Resolves a selector (`all`, a suite name, or a comma-separated list).
pub fn select(selector: &str) -> Result<Vec<&'static str>, String> {
    let selector = selector.trim();
    if selector.is_empty() {
        return Err("empty suite selector".into());
    }
    if selector == "all" {
        return Ok(SUITES.to_vec());
    }
    selector
        .split(',')
        .map(|s| {
            let s = s.trim();
            SUITES
                .iter()
                .find(|n| **n == s)
                .copied()
                .ok_or_else(|| format!("unknown suite `{s}` (available: all, {})", SUITES.join(", ")))
        })
        .collect()
}

pub fn run_suite(name: &str) -> Check {
    let start = Instant::now();
    let (pass, detail) = match name {
        "subproblem" => subproblem_equivalence(500, 200),
        "corollary" => corollary_exactness(100),
        "invariants" => model_decrease_sweep(),
        "dro" => dro_derivatives(50),
        "psi" => psi_transfer(20),
        "concentration" => concentration(1000),
        "saddle" => saddle_escape(),
        "spider" => spider_dominance(100),
        "schedules" => convergence_schedules(),
        "fairness" => fairness_direction(),
        "drtr" => drtr_exactness(50),
        "fd" => fd_zoo(),
        other => (false, format!("unknown suite `{other}`")),
    };
    let suite = SUITES.iter().find(|n| **n == name).copied().unwrap_or("unknown");
    Check { suite, pass, detail, elapsed: start.elapsed() }
}

type Outcome = (bool, String);

fn err_outcome(what: &str, e: impl std::fmt::Display) -> Outcome {
    (false, format!("{what}: {e}"))
}

// ---------------------------------------------------------------------------
// subproblem

fn random_symmetric(n: usize, rng: &mut SeededRng) -> Matrix {
    let m = Matrix::from_fn(n, n, |_, _| rng.normal());
    (&m + m.transpose()) * 0.5
}

fn random_vector(n: usize, rng: &mut SeededRng) -> Vector {
    Vector::from_fn(n, |_, _| rng.normal())
}

/// Random instance; every fourth one is pushed toward the hard case by
/// removing the gradient component along the bottom eigenvector.
fn random_instance(n: usize, k: usize, rng: &mut SeededRng) -> (Vector, Matrix, f64) {
    let b = random_symmetric(n, rng);
    let mut g = random_vector(n, rng);
    let delta = 0.1 + 1.9 * rng.uniform();
    if k % 4 == 3 {
        let eig = b.clone().symmetric_eigen();
        let i = eig.eigenvalues.imin();
        let v = eig.eigenvectors.column(i).into_owned();
        g -= &v * g.dot(&v);
    }
    if k % 50 == 49 {
        g.fill(0.0);
    }
    (g, b, delta)
}

fn project_ball(d: &mut Vector, delta: f64) {
    let n = d.norm();
    if n > delta {
        *d *= delta / n;
    }
}

/// Brute-force minimum of `gᵀd + ½dᵀBd` over `‖d‖ ≤ Δ`: a grid (n ≤ 2) or
/// dense random cloud over the ball and its boundary, then projected
/// gradient descent from the best few points.
pub fn brute_force_tr(g: &Vector, b: &Matrix, delta: f64, rng: &mut SeededRng) -> f64 {
    let n = g.len();
    let mut cands: Vec<(f64, Vector)> = Vec::new();
    let push = |d: Vector, cands: &mut Vec<(f64, Vector)>| cands.push((model_value(g, b, &d), d));
    match n {
        1 => {
            for i in 0..=2000 {
                push(Vector::from_element(1, delta * (-1.0 + i as f64 / 1000.0)), &mut cands);
            }
        }
        2 => {
            let k = 200;
            for i in 0..=k {
                for j in 0..=k {
                    let d = Vector::from_vec(vec![
                        delta * (-1.0 + 2.0 * i as f64 / k as f64),
                        delta * (-1.0 + 2.0 * j as f64 / k as f64),
                    ]);
                    if d.norm() <= delta {
                        push(d, &mut cands);
                    }
                }
            }
            for a in 0..2000 {
                let t = std::f64::consts::TAU * a as f64 / 2000.0;
                push(Vector::from_vec(vec![delta * t.cos(), delta * t.sin()]), &mut cands);
            }
        }
        _ => {
            for k in 0..20_000 {
                let mut d = random_vector(n, rng);
                let norm = d.norm();
                // half on the sphere, half uniform in the ball
                let r = if k % 2 == 0 { delta } else { delta * rng.uniform().powf(1.0 / n as f64) };
                d *= r / norm;
                push(d, &mut cands);
            }
        }
    }
    cands.sort_by(|a, b| a.0.total_cmp(&b.0));
    let step = 1.0 / (b.norm() + 1e-12);
    let mut best = cands[0].0;
    for (_, start) in cands.iter().take(5) {
        let mut d = start.clone();
        for _ in 0..4000 {
            let grad = g + b * &d;
            d -= grad * step;
            project_ball(&mut d, delta);
        }
        best = best.min(model_value(g, b, &d));
    }
    best
}

fn subproblem_equivalence(instances: usize, kkt_instances: usize) -> Outcome {
    let start = Instant::now();
    let mut rng = SeededRng::from_seed(11).derive(Purpose::Probe, 1);
    let mut worst_gap: f64 = 0.0;
    for k in 0..instances {
        let n = 1 + k % 6;
        let (g, b, delta) = random_instance(n, k, &mut rng);
        let step = match solve_general(&g, &b, delta) {
            Ok(s) => s,
            Err(e) => return err_outcome(&format!("instance {k}"), e),
        };
        let brute = brute_force_tr(&g, &b, delta, &mut rng);
        worst_gap = worst_gap.max((step.model_decrease - brute).abs());
    }
    let mut worst_kkt: f64 = 0.0;
    let mut kkt_fail = 0;
    for k in 0..kkt_instances {
        let n = 1 + k % 50;
        let (g, b, delta) = random_instance(n, k, &mut rng);
        match solve_general(&g, &b, delta) {
            Ok(s) => {
                let r = kkt_report(&g, &b, delta, &s);
                let ratio = r.stationarity.max(r.complementarity).max(-r.psd_margin) / r.tolerance;
                worst_kkt = worst_kkt.max(ratio);
                if !r.kkt_ok() {
                    kkt_fail += 1;
                }
            }
            Err(e) => return err_outcome(&format!("kkt instance {k}"), e),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst_gap <= 2e-3 && kkt_fail == 0 && secs < 30.0;
    (
        pass,
        format!(
            "max |solver - brute force| = {worst_gap:.2e} over {instances} instances (tol 2e-3); \
             {kkt_fail}/{kkt_instances} KKT failures, worst residual {worst_kkt:.2e} x tolerance; {secs:.1}s (limit 30s)"
        ),
    )
}

fn corollary_exactness(instances: usize) -> Outcome {
    let mut rng = SeededRng::from_seed(12).derive(Purpose::Probe, 2);
    let mut worst: f64 = 0.0;
    for k in 0..instances {
        let n = 1 + k % 10;
        let g = random_vector(n, &mut rng);
        let rho = 0.05 + 5.0 * rng.uniform();
        let delta = 0.01 + 3.0 * rng.uniform();
        let gn = g.norm();
        let normalized = -&g * (delta / gn);
        let clipped = -&g * (1.0 / rho).min(delta / gn);
        let zero = solve_general(&g, &Matrix::zeros(n, n), delta);
        let ident = solve_general(&g, &(Matrix::identity(n, n) * rho), delta);
        let (Ok(zero), Ok(ident)) = (zero, ident) else {
            return (false, format!("instance {k}: solver error"));
        };
        let direct_n = solve_normalized(&g, delta).map(|s| s.d);
        let direct_c = solve_clipped(&g, rho, delta).map(|s| s.d);
        let (Ok(direct_n), Ok(direct_c)) = (direct_n, direct_c) else {
            return (false, format!("instance {k}: closed-form solver error"));
        };
        for (a, b) in [(&zero.d, &normalized), (&ident.d, &clipped), (&direct_n, &normalized), (&direct_c, &clipped)] {
            worst = worst.max((a - b).amax());
        }
    }
    (worst <= 1e-10, format!("max componentwise deviation {worst:.2e} on {instances} instances (tol 1e-10)"))
}

// ---------------------------------------------------------------------------
// in-loop invariants over the shipped configurations

fn model_decrease_sweep() -> Outcome {
    let mut steps = 0usize;
    let mut runs = 0usize;
    let mut violations = Vec::new();
    for (name, _) in SHIPPED_CONFIGS {
        let mut cfg = shipped_config(name);
        cfg.run.check_invariants = true;
        cfg.run.full_batch = false;
        cfg.run.lambda_min = false;
        if cfg.policy().is_none() {
            continue;
        }
        for &seed in &cfg.run.seeds.clone() {
            let outcome = (|| {
                let problem = build_problem(&cfg, seed).map_err(|e| e.to_string())?;
                let x0 = initial_point(&cfg, &problem, seed).map_err(|e| e.to_string())?;
                let sched = resolve_schedule(&cfg, &problem, &x0, 1.0).map_err(|e| e.to_string())?;
                let diag = RunDiagnostics { full_batch: false, check_invariants: true, ..Default::default() };
                execute(&cfg, problem.oracle.as_ref(), &sched, &x0, seed, diag).map_err(|e| e.to_string())
            })();
            runs += 1;
            match outcome {
                Ok(t) => {
                    steps += t.invariant_checks;
                    if let RunStatus::Failed { iteration, message } = &t.status {
                        violations.push(format!("{name} seed {seed} step {iteration}: {message}"));
                    }
                }
                Err(e) => violations.push(format!("{name} seed {seed}: {e}")),
            }
        }
    }
    let pass = violations.is_empty() && steps > 0;
    let mut detail = format!("{steps} steps checked over {runs} seeded runs, {} violations", violations.len());
    if let Some(v) = violations.first() {
        detail.push_str(&format!("; first: {v}"));
    }
    (pass, detail)
}

// ---------------------------------------------------------------------------
// DRO

fn small_logistic(seed: u64) -> LogisticOracle {
    let data = make_imbalanced_mixture(3, 3, 8, &[1.0, 0.6, 0.3], seed).expect("valid mixture");
    logistic_oracle(data).expect("valid data")
}

/// Random `(x, η)` with `η` near the median loss so both branches of the
/// conjugates are exercised.
fn dro_point(obj: &DroDualObjective<LogisticOracle>, rng: &mut SeededRng) -> (Vector, f64) {
    let n = obj.base().dim();
    let x = Vector::from_fn(n, |_, _| 0.7 * rng.normal());
    let SampleCount::Finite(m) = obj.base().sample_count() else { unreachable!() };
    let mut losses: Vec<f64> = (0..m as u64).map(|s| obj.base().sample_value(&x, s).unwrap()).collect();
    losses.sort_by(|a, b| a.total_cmp(b));
    let eta = losses[m / 2] + 0.3 * rng.normal();
    (x, eta)
}

fn dro_derivatives(points: usize) -> Outcome {
    let conjugates = [
        Conjugate::SmoothedCvar { alpha: 0.25 },
        Conjugate::SmoothedCvar { alpha: 0.5 },
        Conjugate::SmoothedChiSquare,
    ];
    let mut worst_g: f64 = 0.0;
    let mut worst_h: f64 = 0.0;
    for (ci, conj) in conjugates.iter().enumerate() {
        let obj = DroDualObjective::new(small_logistic(ci as u64), *conj, 1.0).expect("valid objective");
        let SampleCount::Finite(m) = obj.sample_count() else { unreachable!() };
        let batch = Batch::full(m);
        let mut rng = SeededRng::from_seed(40 + ci as u64).derive(Purpose::Probe, 0);
        for _ in 0..points {
            let (x, eta) = dro_point(&obj, &mut rng);
            let z = obj.join(&x, eta);
            let n = x.len();
            let split = |z: &Vector| (z.rows(0, n).into_owned(), z[n]);
            let value = |z: &Vector| {
                let (x, e) = split(z);
                dro_value_grad(&obj, &x, e, &batch).map(|v| v.0)
            };
            let grad = |z: &Vector| {
                let (x, e) = split(z);
                dro_value_grad(&obj, &x, e, &batch).map(|v| v.1)
            };
            let r = (|| -> trgs_core::Result<(f64, f64)> {
                let g = grad(&z)?;
                let fd = fd_gradient(value, &z)?;
                let eg = max_relative_deviation(&Matrix::from_column_slice(n + 1, 1, g.as_slice()), &Matrix::from_column_slice(n + 1, 1, fd.as_slice())).0;
                let h = dro_hessian(&obj, &x, eta, &batch)?;
                let fj = fd_jacobian(grad, &z)?;
                Ok((eg, max_relative_deviation(&h, &fj).0))
            })();
            match r {
                Ok((eg, eh)) => {
                    worst_g = worst_g.max(eg);
                    worst_h = worst_h.max(eh);
                }
                Err(e) => return err_outcome(&format!("{conj:?}"), e),
            }
        }
    }
    (
        worst_g <= 1e-5 && worst_h <= 1e-3,
        format!(
            "{} points: gradient rel. error {worst_g:.2e} (tol 1e-5), Hessian blocks rel. error {worst_h:.2e} (tol 1e-3)",
            points * conjugates.len()
        ),
    )
}

fn psi_transfer(points: usize) -> Outcome {
    let obj = DroDualObjective::new(small_logistic(7), Conjugate::SmoothedChiSquare, 1.0).expect("valid objective");
    let SampleCount::Finite(m) = obj.sample_count() else { unreachable!() };
    let batch = Batch::full(m);
    let psi = |x: &Vector| -> trgs_core::Result<f64> {
        let eta = minimize_eta(&obj, x, &batch, PSI_ETA_TOL)?.eta;
        Ok(dro_value_grad(&obj, x, eta, &batch)?.0)
    };
    let mut rng = SeededRng::from_seed(50).derive(Purpose::Probe, 0);
    let mut worst_grad: f64 = 0.0;
    let mut worst_gap = f64::INFINITY;
    let mut below = 0;
    let mut nullity = 0;
    let mut lowered = 0;
    for _ in 0..points {
        let (x, _) = dro_point(&obj, &mut rng);
        let r = (|| -> trgs_core::Result<(f64, f64)> {
            let st = psi_stationarity(&obj, &x, &batch)?;
            let fd = fd_gradient(psi, &x)?;
            let n = x.len();
            let e = max_relative_deviation(&Matrix::from_column_slice(n, 1, st.grad.as_slice()), &Matrix::from_column_slice(n, 1, fd.as_slice())).0;
            let gap = st.lambda_min().unwrap_or(f64::NAN) - st.a1_lambda_min().unwrap_or(f64::NAN);
            // softmax weights are shift invariant, so A1 has a null space the
            // correction cannot touch; compare the first eigenvalue above it
            let sorted = |h: &Matrix| {
                let mut v: Vec<f64> = h.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
                v.sort_by(f64::total_cmp);
                v
            };
            let (a1, h) = (sorted(st.a1.as_ref().unwrap()), sorted(st.hessian.as_ref().unwrap()));
            let z = a1.iter().take_while(|l| l.abs() < 1e-9).count();
            nullity = z;
            if z < a1.len() && h[z] < a1[z] - 1e-12 {
                lowered += 1;
            }
            Ok((e, gap))
        })();
        match r {
            Ok((e, gap)) => {
                worst_grad = worst_grad.max(e);
                worst_gap = worst_gap.min(gap);
                if gap < -1e-8 {
                    below += 1;
                }
            }
            Err(e) => return err_outcome("psi", e),
        }
    }
    (
        worst_grad <= 1e-4 && below == 0,
        format!(
            "grad of psi vs FD rel. error {worst_grad:.2e} (tol 1e-4); lambda_min(hess psi) - lambda_min(A1) >= -1e-8 \
             fails at {below}/{points} points (min gap {worst_gap:.3e}); A1 has a {nullity}-dim null space, \
             the correction lowers the first eigenvalue above it at {lowered}/{points} points"
        ),
    )
}

// ---------------------------------------------------------------------------
// concentration

fn concentration(trials: usize) -> Outcome {
    let mut worst_ratio: f64 = 0.0;
    let mut fails = Vec::new();
    for (i, n) in [2usize, 10, 50].into_iter().enumerate() {
        for (j, m) in [10usize, 100, 1000].into_iter().enumerate() {
            let mut rng = SeededRng::from_seed(60 + (3 * i + j) as u64).derive(Purpose::Probe, 0);
            match hessian_concentration_trial(n, 1.0, m, trials, &mut rng) {
                Ok(r) => {
                    worst_ratio = worst_ratio.max(r.mean_sq_deviation / r.bound);
                    if !r.pass {
                        fails.push(format!("(n={n}, m={m})"));
                    }
                }
                Err(e) => return err_outcome("concentration", e),
            }
        }
    }
    (
        fails.is_empty(),
        format!("9 (n, m) pairs x {trials} trials: worst empirical/bound = {worst_ratio:.3}; failures: {}", if fails.is_empty() { "none".into() } else { fails.join(" ") }),
    )
}

// ---------------------------------------------------------------------------
// run-level checks

fn saddle_escape() -> Outcome {
    let start = Instant::now();
    let first = match run_seed(&shipped_config("saddle_fotrgs"), 0, 1.0) {
        Ok(r) => r,
        Err(e) => return err_outcome("fotrgs", e),
    };
    let second = match run_seed(&shipped_config("saddle_sotrgs"), 0, 1.0) {
        Ok(r) => r,
        Err(e) => return err_outcome("sotrgs", e),
    };
    let stalled = matches!(first.trace.status, RunStatus::ZeroGradientStall { iteration: 0 });
    let last = second.trace.last();
    let reached = matches!(second.trace.status, RunStatus::Stopped { .. })
        && last.grad_norm.is_some_and(|g| g <= 0.01)
        && last.lambda_min.is_some_and(|l| l >= -0.1);
    let secs = start.elapsed().as_secs_f64();
    (
        stalled && reached && secs < 10.0,
        format!(
            "fotrgs status: {:?}; sotrgs reached grad {:.2e}, lambda_min {:.3} after {} of {} steps; {secs:.1}s (limit 10s)",
            first.trace.status,
            last.grad_norm.unwrap_or(f64::NAN),
            last.lambda_min.unwrap_or(f64::NAN),
            last.iter,
            second.schedule.iterations
        ),
    )
}

fn spider_dominance(seeds: usize) -> Outcome {
    let q = match make_quartic_saddle(4, 0.5) {
        Ok(q) => q,
        Err(e) => return err_outcome("quartic", e),
    };
    let x0 = Vector::from_vec(vec![1.5, 0.5, 0.5, 0.5]);
    let schedule = match Schedule::manual(0.05, 0.05, 400, 50) {
        Ok(s) => s.with_correction(90, 5),
        Err(e) => return err_outcome("schedule", e),
    };
    let seed_list: Vec<u64> = (0..seeds as u64).collect();
    match matched_sample_comparison(&q, BtPolicy::Zero, &schedule, &x0, &seed_list) {
        Ok(c) => {
            let frac = c.vr_lower_fraction();
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            (
                frac >= 0.9,
                format!(
                    "VR error below plain (batch {}) at {:.0}% of {} steps (need 90%); mean errors {:.3e} vs {:.3e}; final samples {} vs {}",
                    c.plain_batch,
                    100.0 * frac,
                    c.vr_error.len(),
                    mean(&c.vr_error),
                    mean(&c.plain_error),
                    c.vr_samples.last().unwrap(),
                    c.plain_samples.last().unwrap()
                ),
            )
        }
        Err(e) => err_outcome("comparison", e),
    }
}

fn convergence_schedules() -> Outcome {
    let start = Instant::now();
    let run_all = |name: &str| -> Result<Vec<crate::experiment::SeedResult>, String> {
        let cfg = shipped_config(name);
        cfg.run.seeds.iter().map(|&s| run_seed(&cfg, s, 1.0).map_err(|e| e.to_string())).collect()
    };
    let (fo, so, vr) = match (run_all("quartic_fotrgs"), run_all("quartic_sotrgs"), run_all("quartic_sotrgs_vr")) {
        (Ok(a), Ok(b), Ok(c)) => (a, b, c),
        (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => return err_outcome("run", e),
    };
    let best: f64 = fo.iter().map(|r| r.trace.best().and_then(|b| b.grad_norm).unwrap_or(f64::INFINITY)).sum::<f64>() / fo.len() as f64;
    let part1 = best <= 0.1;
    let reach = |rs: &[crate::experiment::SeedResult]| -> Option<(f64, f64)> {
        let mut g = 0.0;
        let mut all = 0.0;
        for r in rs {
            let rec = r.trace.first_below(0.05)?;
            g += rec.grad_samples as f64;
            all += rec.samples as f64;
        }
        Some((g / rs.len() as f64, all / rs.len() as f64))
    };
    let (Some((so_g, so_all)), Some((vr_g, vr_all))) = (reach(&so), reach(&vr)) else {
        return (false, format!("fotrgs mean best grad {best:.3e}; a second-order run never reached grad <= 0.05"));
    };
    // cumulative samples count gradient and Hessian draws alike
    let ratio = vr_all / so_all;
    let secs = start.elapsed().as_secs_f64();
    (
        part1 && ratio <= 0.5 && secs < 120.0,
        format!(
            "fotrgs mean best grad {best:.3e} (target 0.1, T = {}); samples to grad <= 0.05: sotrgs-vr {vr_all:.0} vs sotrgs {so_all:.0} \
             (ratio {ratio:.3}, need <= 0.5; gradient samples only {vr_g:.0} vs {so_g:.0}, ratio {:.3}); {secs:.1}s (limit 120s)",
            fo[0].schedule.iterations,
            vr_g / so_g
        ),
    )
}

fn fairness_direction() -> Outcome {
    let start = Instant::now();
    let finals = |name: &str| -> Result<(f64, f64), String> {
        let cfg = shipped_config(name);
        let mut worst = 0.0;
        let mut overall = 0.0;
        for &s in &cfg.run.seeds {
            let r = run_seed(&cfg, s, 1.0).map_err(|e| e.to_string())?;
            if r.failed() {
                return Err(format!("seed {s}: {:?}", r.trace.status));
            }
            let a = r.accuracy.as_ref().and_then(|a| a.last().cloned()).ok_or("no accuracy recorded")?;
            worst += a.worst;
            overall += a.overall;
        }
        let k = cfg.run.seeds.len() as f64;
        Ok((worst / k, overall / k))
    };
    let ((dw, dov), (ew, eov)) = match (finals("fairness_dro"), finals("fairness_erm")) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return err_outcome("fairness run", e),
    };
    let secs = start.elapsed().as_secs_f64();
    let gain = 100.0 * (dw - ew);
    let gap = 100.0 * (dov - eov);
    (
        gain >= 2.0 && gap.abs() <= 2.0 && secs < 120.0,
        format!(
            "worst-class accuracy DRO {:.2}% vs ERM {:.2}% (gain {gain:+.2} pts, need >= 2); overall {:.2}% vs {:.2}% \
             (diff {gap:+.2} pts, need within 2); {secs:.1}s (limit 120s)",
            100.0 * dw,
            100.0 * ew,
            100.0 * dov,
            100.0 * eov
        ),
    )
}

/// `F(u, v) = ½((u − 3)² + (v − 1)²) + u³/6`. Its Hessian at the origin is
/// the identity, so the first (one-dimensional) step is exact too.
struct TiltedQuadratic;

impl StochasticOracle for TiltedQuadratic {
    fn dim(&self) -> usize {
        2
    }

    fn sample_count(&self) -> SampleCount {
        SampleCount::Finite(1)
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities::second_order()
    }

    fn sample_value(&self, x: &Vector, _: SampleId) -> trgs_core::Result<f64> {
        Ok(0.5 * ((x[0] - 3.0).powi(2) + (x[1] - 1.0).powi(2)) + x[0].powi(3) / 6.0)
    }

    fn sample_gradient(&self, x: &Vector, _: SampleId, out: &mut Vector) -> trgs_core::Result<()> {
        out[0] = x[0] - 3.0 + 0.5 * x[0] * x[0];
        out[1] = x[1] - 1.0;
        Ok(())
    }

    fn sample_hessian(&self, x: &Vector, _: SampleId, out: &mut Matrix) -> trgs_core::Result<()> {
        out.fill(0.0);
        out[(0, 0)] = 1.0 + x[0];
        out[(1, 1)] = 1.0;
        Ok(())
    }
}

fn drtr_exactness(steps: usize) -> Outcome {
    let f = TiltedQuadratic;
    let delta = 0.03;
    let schedule = match Schedule::manual(0.01, delta, 1, steps) {
        Ok(s) => s.with_hessian_batch(1),
        Err(e) => return err_outcome("schedule", e),
    };
    let diag = RunDiagnostics { keep_iterates: true, ..Default::default() };
    let trace = match run_drtr(&f, &schedule, &Vector::zeros(2), &SeededRng::from_seed(0), diag) {
        Ok(t) => t,
        Err(e) => return err_outcome("drtr", e),
    };
    let its = trace.iterates.as_ref().expect("iterates kept");
    if its.len() != steps + 1 {
        return (false, format!("run ended after {} steps: {:?}", its.len() - 1, trace.status));
    }
    let mut worst: f64 = 0.0;
    let mut boundary = 0;
    for w in its.windows(2) {
        let (Ok(g), Ok(h)) = (f.full_gradient(&w[0]), f.full_hessian(&w[0])) else {
            return (false, "oracle failure".into());
        };
        let d = &w[1] - &w[0];
        let full = match solve_general(&g, &h, delta) {
            Ok(s) => s,
            Err(e) => return err_outcome("solve_general", e),
        };
        worst = worst.max((model_value(&g, &h, &d) - full.model_decrease).abs());
        if (d.norm() - delta).abs() < 1e-12 {
            boundary += 1;
        }
    }
    (
        worst <= 1e-8,
        format!("max |m(drtr step) - m(full solve)| = {worst:.2e} over {steps} steps (tol 1e-8); {boundary} steps on the boundary"),
    )
}

fn fd_zoo() -> Outcome {
    let mut rng = SeededRng::from_seed(70).derive(Purpose::Probe, 0);
    let mut lines = Vec::new();
    let mut pass = true;
    let mut check = |name: &str, o: &dyn StochasticOracle, x: &Vector, hess: bool| {
        for (order, tol, on) in [(FdOrder::Gradient, 1e-5, true), (FdOrder::Hessian, 1e-3, hess)] {
            if !on {
                continue;
            }
            match fd_validate(o, x, order, tol) {
                Ok(r) => {
                    pass &= r.pass;
                    lines.push(format!("{name}/{order:?} {:.1e}", r.max_rel_error));
                }
                Err(e) => {
                    pass = false;
                    lines.push(format!("{name}/{order:?} error {e}"));
                }
            }
        }
    };
    let q = make_quartic_saddle(4, 0.0).expect("quartic");
    check("quartic", &q, &random_vector(4, &mut rng), true);
    let e = make_exp_scalar(3).expect("exp");
    check("exp", &e, &random_vector(3, &mut rng), true);
    let quad = make_quadratic(random_symmetric(4, &mut rng), Some(random_vector(4, &mut rng))).expect("quadratic");
    check("quadratic", &quad, &random_vector(4, &mut rng), true);
    let lo = small_logistic(3);
    let x = random_vector(lo.dim(), &mut rng) * 0.5;
    check("logistic", &lo, &x, true);
    let data = make_imbalanced_mixture(4, 3, 6, &[1.0, 0.5, 0.5], 4).expect("mixture");
    let mlp = mlp_oracle(data, 5).expect("mlp");
    let x = mlp.init_params(&mut rng);
    check("mlp", &mlp, &x, false);
    let obj = DroDualObjective::new(small_logistic(5), Conjugate::SmoothedCvar { alpha: 0.3 }, 0.7).expect("dro");
    let (x, eta) = dro_point(&obj, &mut rng);
    check("dro", &obj, &obj.join(&x, eta), true);
    let lmin = min_eigenvalue(&q.full_hessian(&Vector::zeros(4)).expect("hessian"));
    pass &= (lmin + 1.0).abs() < 1e-12;
    (pass, format!("{}; quartic saddle lambda_min {lmin}", lines.join(", ")))
}
