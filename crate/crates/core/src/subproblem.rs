//! Exact solvers for the trust-region subproblem
//!
//! ```text
//! min  m(d) = gᵀd + ½ dᵀBd   s.t.  ‖d‖ ≤ Δ
//! ```
//!
//! The closed forms for `B = 0` (normalized step) and `B = ρI` (clipped step)
//! are provided alongside the general symmetric case, which goes through a
//! dense eigendecomposition and the secular equation `1/‖d(λ)‖ = 1/Δ`, with
//! explicit handling of the hard case. Every solver returns the multiplier λ
//! together with the residuals of the optimality system
//! `(B + λI)d = −g`, `λ(Δ − ‖d‖) = 0`, `B + λI ⪰ 0`.

use nalgebra::{Matrix2, SymmetricEigen, Vector2};

use crate::error::{invalid, numeric, Error, Result};
use crate::oracle::{Matrix, Vector};

/// Relative threshold under which the gradient counts as orthogonal to the
/// minimal eigenspace.
pub const HARD_CASE_TOL: f64 = 1e-10;
/// Angle tolerance under which two spanning directions count as parallel.
pub const SUBSPACE_ANGLE_TOL: f64 = 1e-8;
const MAX_SECULAR_ITERS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct TrustRegionStep {
    pub d: Vector,
    /// Lagrange multiplier of the ball constraint.
    pub tr_multiplier: f64,
    /// `m(d) − m(0)`.
    pub model_decrease: f64,
    /// `‖(B + λI)d + g‖`.
    pub kkt_stationarity: f64,
    /// `|λ (Δ − ‖d‖)|`.
    pub kkt_complementarity: f64,
    /// `λ_min(B + λI)`.
    pub psd_margin: f64,
    pub hard_case: bool,
}

impl TrustRegionStep {
    pub fn step_norm(&self) -> f64 {
        self.d.norm()
    }
}

/// `gᵀd + ½ dᵀBd`.
pub fn model_value(g: &Vector, b: &Matrix, d: &Vector) -> f64 {
    g.dot(d) + 0.5 * d.dot(&(b * d))
}

fn check_radius(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(invalid(format!("trust radius must be positive and finite, got {delta}")));
    }
    Ok(())
}

/// `B = 0`: the minimizer is the normalized step `d = −(Δ/‖g‖) g`.
pub fn solve_normalized(g: &Vector, delta: f64) -> Result<TrustRegionStep> {
    check_radius(delta)?;
    let gnorm = g.norm();
    if gnorm == 0.0 {
        return Err(Error::DegenerateGradient);
    }
    if !gnorm.is_finite() {
        return Err(numeric("non-finite gradient"));
    }
    let d = g * (-delta / gnorm);
    let lambda = gnorm / delta;
    let residual = &d * lambda + g;
    Ok(TrustRegionStep {
        kkt_complementarity: (lambda * (delta - d.norm())).abs(),
        model_decrease: g.dot(&d),
        kkt_stationarity: residual.norm(),
        psd_margin: lambda,
        tr_multiplier: lambda,
        hard_case: false,
        d,
    })
}

/// `B = ρI`: the minimizer is the clipped step `d = −min{Δ/‖g‖, 1/ρ} g`.
pub fn solve_clipped(g: &Vector, rho: f64, delta: f64) -> Result<TrustRegionStep> {
    check_radius(delta)?;
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(invalid(format!("clipping parameter must be positive, got {rho}")));
    }
    let gnorm = g.norm();
    if !gnorm.is_finite() {
        return Err(numeric("non-finite gradient"));
    }
    let (scale, lambda) = if gnorm == 0.0 {
        (1.0 / rho, 0.0)
    } else {
        ((delta / gnorm).min(1.0 / rho), (gnorm / delta - rho).max(0.0))
    };
    let d = g * (-scale);
    let residual = &d * (rho + lambda) + g;
    Ok(TrustRegionStep {
        kkt_complementarity: (lambda * (delta - d.norm())).abs(),
        model_decrease: g.dot(&d) + 0.5 * rho * d.norm_squared(),
        kkt_stationarity: residual.norm(),
        psd_margin: rho + lambda,
        tr_multiplier: lambda,
        hard_case: false,
        d,
    })
}

/// Largest absolute entry of `B − Bᵀ`.
fn asymmetry(b: &Matrix) -> f64 {
    let n = b.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((b[(i, j)] - b[(j, i)]).abs());
        }
    }
    worst
}

/// Eigen-pairs sorted by ascending eigenvalue.
struct SortedEigen {
    values: Vec<f64>,
    vectors: Matrix,
}

impl SortedEigen {
    fn new(b: &Matrix) -> Self {
        let eig = SymmetricEigen::new(b.clone());
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = Matrix::from_fn(b.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
        Self { values, vectors }
    }
}

/// `‖d(λ)‖²` and `Σ gᵢ²/(μᵢ+λ)³` in the eigenbasis.
fn secular_terms(gt: &[f64], mu: &[f64], lambda: f64) -> (f64, f64) {
    let mut s = 0.0;
    let mut ds = 0.0;
    for (&gi, &mi) in gt.iter().zip(mu) {
        let den = mi + lambda;
        let q = gi / den;
        s += q * q;
        ds += q * q / den;
    }
    (s, ds)
}

/// Root of `1/‖d(λ)‖ − 1/Δ` on `(lower, ∞)` by safeguarded Newton.
fn secular_root(gt: &[f64], mu: &[f64], lower: f64, upper_hint: f64, delta: f64) -> Result<f64> {
    let phi = |lambda: f64| {
        let (s, ds) = secular_terms(gt, mu, lambda);
        let norm = s.sqrt();
        (1.0 / norm - 1.0 / delta, ds / (s * norm), norm)
    };
    let mut lo = lower;
    let mut hi = upper_hint.max(lower + f64::MIN_POSITIVE);
    let mut grow = 0;
    while phi(hi).0 < 0.0 {
        hi = lower + 2.0 * (hi - lower).max(1.0);
        grow += 1;
        if grow > 100 {
            return Err(numeric("secular equation: failed to bracket the multiplier"));
        }
    }
    let mut lambda = hi;
    for _ in 0..MAX_SECULAR_ITERS {
        let (f, df, norm) = phi(lambda);
        if (norm - delta).abs() <= 1e-14 * delta || f == 0.0 {
            return Ok(lambda);
        }
        if f < 0.0 {
            lo = lambda;
        } else {
            hi = lambda;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi.abs().max(f64::MIN_POSITIVE) {
            return Ok(hi);
        }
        let newton = lambda - f / df;
        lambda = if newton > lo && newton < hi && newton.is_finite() { newton } else { 0.5 * (lo + hi) };
    }
    Err(numeric("secular equation: Newton iteration did not converge in 200 steps"))
}

/// Global minimizer of `gᵀd + ½dᵀBd` over `‖d‖ ≤ Δ` for symmetric `B`.
pub fn solve_general(g: &Vector, b: &Matrix, delta: f64) -> Result<TrustRegionStep> {
    check_radius(delta)?;
    let n = g.len();
    if n == 0 || b.nrows() != n || b.ncols() != n {
        return Err(invalid(format!("dimension mismatch: g has {n} entries, B is {}x{}", b.nrows(), b.ncols())));
    }
    if !g.iter().chain(b.iter()).all(|v| v.is_finite()) {
        return Err(numeric("non-finite subproblem data"));
    }
    let bnorm_f = b.norm();
    if asymmetry(b) > 1e-10 * bnorm_f {
        return Err(invalid("B is not symmetric"));
    }
    let bs = (b + b.transpose()) * 0.5;
    let eig = SortedEigen::new(&bs);
    let mu = &eig.values;
    let gt: Vec<f64> = (eig.vectors.transpose() * g).iter().copied().collect();
    let gnorm = g.norm();
    let lmin = mu[0];
    let bnorm = mu[0].abs().max(mu[n - 1].abs());
    let eig_tol = 1e-12 * bnorm.max(1.0);
    let upper = gnorm / delta + bnorm;

    let to_original = |dt: &[f64]| &eig.vectors * Vector::from_column_slice(dt);
    let newton_at = |lambda: f64, skip: &dyn Fn(usize) -> bool| -> Vec<f64> {
        gt.iter()
            .zip(mu)
            .enumerate()
            .map(|(i, (&gi, &mi))| if skip(i) { 0.0 } else { -gi / (mi + lambda) })
            .collect()
    };

    let (dt, lambda, hard_case) = if lmin > eig_tol {
        let d0 = newton_at(0.0, &|_| false);
        if d0.iter().map(|v| v * v).sum::<f64>().sqrt() <= delta {
            (d0, 0.0, false)
        } else {
            let lambda = secular_root(&gt, mu, 0.0, upper, delta)?;
            (newton_at(lambda, &|_| false), lambda, false)
        }
    } else {
        let lower = (-lmin).max(0.0);
        let deficient = mu.iter().take_while(|&&m| m <= lmin + eig_tol).count();
        let gdef = gt[..deficient].iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut solved = None;
        if gdef <= HARD_CASE_TOL * gnorm {
            let partial = newton_at(lower, &|i| i < deficient);
            let pnorm = partial.iter().map(|v| v * v).sum::<f64>().sqrt();
            if pnorm <= delta {
                if lower == 0.0 {
                    solved = Some((partial, 0.0, false));
                } else {
                    let tau = (delta * delta - pnorm * pnorm).max(0.0).sqrt();
                    let mut dt = partial;
                    dt[0] += tau;
                    solved = Some((dt, lower, true));
                }
            }
        }
        match solved {
            Some(s) => s,
            None => {
                let lambda = secular_root(&gt, mu, lower, upper, delta)?;
                (newton_at(lambda, &|_| false), lambda, false)
            }
        }
    };

    let d = to_original(&dt);
    if !d.iter().all(|v| v.is_finite()) {
        return Err(numeric("subproblem produced a non-finite step"));
    }
    let dnorm = d.norm();
    if dnorm > delta * (1.0 + 1e-10) {
        return Err(numeric(format!("subproblem step norm {dnorm} exceeds radius {delta}")));
    }
    let residual = &bs * &d + &d * lambda + g;
    Ok(TrustRegionStep {
        model_decrease: model_value(g, &bs, &d),
        kkt_stationarity: residual.norm(),
        kkt_complementarity: (lambda * (delta - dnorm)).abs(),
        psd_margin: lmin + lambda,
        tr_multiplier: lambda,
        hard_case,
        d,
    })
}

/// Two-dimensional subproblem with an elliptic metric:
/// `min cᵀα + ½αᵀQα  s.t.  αᵀGα ≤ Δ²`.
#[derive(Debug, Clone, PartialEq)]
pub struct Subproblem2D {
    pub q: Matrix2<f64>,
    pub c: Vector2<f64>,
    pub g: Matrix2<f64>,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricStep {
    pub alpha: Vector2<f64>,
    pub tr_multiplier: f64,
    /// `cᵀα + ½αᵀQα`.
    pub model_value: f64,
}

impl Subproblem2D {
    pub fn model_value(&self, alpha: &Vector2<f64>) -> f64 {
        self.c.dot(alpha) + 0.5 * alpha.dot(&(self.q * alpha))
    }

    pub fn metric_norm(&self, alpha: &Vector2<f64>) -> f64 {
        alpha.dot(&(self.g * alpha)).max(0.0).sqrt()
    }
}

/// Solves the 2-D metric subproblem by whitening through the Cholesky factor
/// of `G` and delegating to [`solve_general`].
pub fn solve_2d_metric(p: &Subproblem2D) -> Result<MetricStep> {
    check_radius(p.delta)?;
    let (g11, g12, g22) = (p.g[(0, 0)], 0.5 * (p.g[(0, 1)] + p.g[(1, 0)]), p.g[(1, 1)]);
    let det = g11 * g22 - g12 * g12;
    if !(g11 > 0.0 && g22 > 0.0) || det <= SUBSPACE_ANGLE_TOL * SUBSPACE_ANGLE_TOL * g11 * g22 {
        return Err(Error::DegenerateSubspace("metric G is singular".into()));
    }
    // G = RᵀR with R upper triangular.
    let r11 = g11.sqrt();
    let r12 = g12 / r11;
    let r22 = (g22 - r12 * r12).sqrt();
    let r_inv = Matrix2::new(1.0 / r11, -r12 / (r11 * r22), 0.0, 1.0 / r22);
    let c_w = r_inv.transpose() * p.c;
    let q_w = r_inv.transpose() * p.q * r_inv;
    let q_w = (q_w + q_w.transpose()) * 0.5;
    let g_vec = Vector::from_column_slice(c_w.as_slice());
    let b_mat = Matrix::from_column_slice(2, 2, q_w.as_slice());
    let step = solve_general(&g_vec, &b_mat, p.delta)?;
    let beta = Vector2::new(step.d[0], step.d[1]);
    let alpha = r_inv * beta;
    Ok(MetricStep { model_value: p.model_value(&alpha), alpha, tr_multiplier: step.tr_multiplier })
}

/// Recomputed optimality residuals and the model-decrease check
/// `m(d) − m(0) ≤ −½λ‖d‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct KktReport {
    pub stationarity: f64,
    pub complementarity: f64,
    pub psd_margin: f64,
    pub decrease: f64,
    pub decrease_bound: f64,
    pub tolerance: f64,
    pub step_norm_ok: bool,
}

impl KktReport {
    pub fn kkt_ok(&self) -> bool {
        self.stationarity <= self.tolerance
            && self.complementarity <= self.tolerance
            && self.psd_margin >= -self.tolerance
            && self.step_norm_ok
    }

    pub fn decrease_ok(&self) -> bool {
        let slack = 1e-8 * (1.0 + self.decrease.abs() + self.decrease_bound.abs());
        self.decrease <= self.decrease_bound + slack
    }
}

/// Verifies a step against the optimality system and the model-decrease
/// inequality. Violations are returned as [`Error::InvariantViolation`].
pub fn kkt_and_decrease(g: &Vector, b: &Matrix, delta: f64, step: &TrustRegionStep) -> Result<KktReport> {
    check_report(kkt_report(g, b, delta, step))
}

/// Turns a report into an error when either check fails.
pub fn check_report(report: KktReport) -> Result<KktReport> {
    if !report.kkt_ok() {
        return Err(Error::InvariantViolation(format!(
            "KKT residuals out of tolerance {:.3e}: stationarity {:.3e}, complementarity {:.3e}, psd margin {:.3e}",
            report.tolerance, report.stationarity, report.complementarity, report.psd_margin
        )));
    }
    if !report.decrease_ok() {
        return Err(Error::InvariantViolation(format!(
            "model decrease {:.6e} exceeds bound {:.6e}",
            report.decrease, report.decrease_bound
        )));
    }
    Ok(report)
}

/// [`kkt_report`] for `B = ρI` without forming the matrix (`ρ = 0` covers
/// the normalized policy).
pub fn kkt_report_identity(g: &Vector, rho: f64, delta: f64, step: &TrustRegionStep) -> KktReport {
    let d = &step.d;
    let lambda = step.tr_multiplier;
    let dnorm = d.norm();
    let residual = d * (rho + lambda) + g;
    KktReport {
        stationarity: residual.norm(),
        complementarity: (lambda * (delta - dnorm)).abs(),
        psd_margin: rho + lambda,
        decrease: g.dot(d) + 0.5 * rho * dnorm * dnorm,
        decrease_bound: -0.5 * lambda * dnorm * dnorm,
        tolerance: 1e-8 * (1.0 + g.norm() + rho.abs()),
        step_norm_ok: lambda >= 0.0 && dnorm <= delta * (1.0 + 1e-10),
    }
}

/// Optimality residuals of a 2-D metric step: `(Q + λG)α + c = 0`,
/// `Q + λG ⪰ 0`, complementarity in the `G`-norm, and
/// `m(α) ≤ −½λ‖α‖²_G`.
pub fn kkt_report_2d(p: &Subproblem2D, step: &MetricStep) -> KktReport {
    let lambda = step.tr_multiplier;
    let m = p.q + p.g * lambda;
    let m = (m + m.transpose()) * 0.5;
    let residual = m * step.alpha + p.c;
    let anorm = p.metric_norm(&step.alpha);
    let psd = m.symmetric_eigenvalues().min();
    let scale = 1.0 + p.c.norm() + p.q.norm() + lambda * p.g.norm();
    KktReport {
        stationarity: residual.norm(),
        complementarity: (lambda * (p.delta - anorm)).abs(),
        psd_margin: psd,
        decrease: p.model_value(&step.alpha),
        decrease_bound: -0.5 * lambda * anorm * anorm,
        tolerance: 1e-8 * scale,
        step_norm_ok: lambda >= 0.0 && anorm <= p.delta * (1.0 + 1e-8),
    }
}

/// Residuals without the pass/fail verdict.
pub fn kkt_report(g: &Vector, b: &Matrix, delta: f64, step: &TrustRegionStep) -> KktReport {
    let d = &step.d;
    let lambda = step.tr_multiplier;
    let (lmin, bnorm) = if b.iter().all(|&v| v == 0.0) {
        (0.0, 0.0)
    } else {
        let eig = SymmetricEigen::new((b + b.transpose()) * 0.5).eigenvalues;
        (eig.min(), eig.amax())
    };
    let residual = b * d + d * lambda + g;
    let dnorm = d.norm();
    KktReport {
        stationarity: residual.norm(),
        complementarity: (lambda * (delta - dnorm)).abs(),
        psd_margin: lmin + lambda,
        decrease: model_value(g, b, d),
        decrease_bound: -0.5 * lambda * dnorm * dnorm,
        tolerance: 1e-8 * (1.0 + g.norm() + bnorm),
        step_norm_ok: lambda >= 0.0 && dnorm <= delta * (1.0 + 1e-10),
    }
}
