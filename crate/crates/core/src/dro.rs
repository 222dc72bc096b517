//! Penalized DRO dual objective `L(x, η) = λ·E[ψ*((ℓ(x;ξ) − η)/λ)] + η`.
//!
//! `λ` here is the DRO penalty and is always called `penalty` to keep it apart
//! from the trust-region multiplier.

use nalgebra::SymmetricEigen;

use crate::error::{invalid, numeric, Error, Result};
use crate::oracle::{Batch, Capabilities, CompensatedSum, Matrix, SampleCount, SampleId, StochasticOracle, Vector};

/// Divergence conjugates `ψ*`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Conjugate {
    /// `−1 + ¼(t+2)₊²`
    ChiSquare,
    /// `−1 + ¼(t+2)²` for `t ≥ 0`, `2(e^{t/2} − 1)` below.
    SmoothedChiSquare,
    /// `eᵗ − 1`
    Kl,
    /// `α⁻¹ t₊`
    Cvar { alpha: f64 },
    /// `α⁻¹ log(1 − α + α eᵗ)`
    SmoothedCvar { alpha: f64 },
}

/// `ψ*(t)` and its derivatives. `second` is `None` where it does not exist.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjugateEval {
    pub value: f64,
    pub first: f64,
    pub second: Option<f64>,
}

/// Above this argument the smoothed CVaR uses its log-sum-exp rewrite.
pub const CVAR_OVERFLOW_SWITCH: f64 = 30.0;

impl Conjugate {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Conjugate::Cvar { alpha } | Conjugate::SmoothedCvar { alpha } if !(alpha > 0.0 && alpha < 1.0) => {
                Err(invalid(format!("CVaR level {alpha} outside (0, 1)")))
            }
            _ => Ok(()),
        }
    }

    /// Twice continuously differentiable everywhere.
    pub fn is_smooth(&self) -> bool {
        matches!(self, Conjugate::SmoothedChiSquare | Conjugate::Kl | Conjugate::SmoothedCvar { .. })
    }

    pub fn eval(&self, t: f64) -> ConjugateEval {
        match *self {
            Conjugate::ChiSquare => {
                let p = (t + 2.0).max(0.0);
                let second = if t == -2.0 { None } else if t > -2.0 { Some(0.5) } else { Some(0.0) };
                ConjugateEval { value: -1.0 + 0.25 * p * p, first: 0.5 * p, second }
            }
            Conjugate::SmoothedChiSquare => {
                if t >= 0.0 {
                    ConjugateEval { value: -1.0 + 0.25 * (t + 2.0).powi(2), first: 0.5 * (t + 2.0), second: Some(0.5) }
                } else {
                    let e = (0.5 * t).exp();
                    ConjugateEval { value: 2.0 * (e - 1.0), first: e, second: Some(0.5 * e) }
                }
            }
            Conjugate::Kl => {
                let e = t.exp();
                ConjugateEval { value: t.exp_m1(), first: e, second: Some(e) }
            }
            Conjugate::Cvar { alpha } => ConjugateEval {
                value: t.max(0.0) / alpha,
                first: if t > 0.0 { 1.0 / alpha } else { 0.0 },
                second: if t == 0.0 { None } else { Some(0.0) },
            },
            Conjugate::SmoothedCvar { alpha } => {
                if t > 0.0 {
                    // divide through by eᵗ: stable for large t
                    let e = (-t).exp();
                    let den = alpha + (1.0 - alpha) * e;
                    let value = if t > CVAR_OVERFLOW_SWITCH {
                        (t + den.ln()) / alpha
                    } else {
                        (alpha * t.exp_m1()).ln_1p() / alpha
                    };
                    ConjugateEval { value, first: 1.0 / den, second: Some((1.0 - alpha) * e / (den * den)) }
                } else {
                    let e = t.exp();
                    let den = 1.0 - alpha + alpha * e;
                    ConjugateEval {
                        value: (alpha * t.exp_m1()).ln_1p() / alpha,
                        first: e / den,
                        second: Some((1.0 - alpha) * e / (den * den)),
                    }
                }
            }
        }
    }
}

pub fn conjugate_eval(conj: Conjugate, t: f64) -> Result<ConjugateEval> {
    conj.validate()?;
    if !t.is_finite() {
        return Err(invalid("conjugate argument must be finite"));
    }
    Ok(conj.eval(t))
}

/// The joint objective over `z = (x, η)`, itself a stochastic oracle of
/// dimension `n + 1` whose last coordinate is `η`.
pub struct DroDualObjective<O> {
    base: O,
    conjugate: Conjugate,
    penalty: f64,
}

impl<O: StochasticOracle> DroDualObjective<O> {
    pub fn new(base: O, conjugate: Conjugate, penalty: f64) -> Result<Self> {
        conjugate.validate()?;
        if !(penalty > 0.0 && penalty.is_finite()) {
            return Err(invalid("DRO penalty must be positive"));
        }
        Ok(Self { base, conjugate, penalty })
    }

    pub fn base(&self) -> &O {
        &self.base
    }

    pub fn conjugate(&self) -> Conjugate {
        self.conjugate
    }

    pub fn penalty(&self) -> f64 {
        self.penalty
    }

    /// Joint point `(x, η)`.
    pub fn join(&self, x: &Vector, eta: f64) -> Vector {
        let mut z = x.clone().resize_vertically(x.len() + 1, 0.0);
        z[x.len()] = eta;
        z
    }

    fn split(&self, z: &Vector) -> Result<(Vector, f64)> {
        let n = self.base.dim();
        if z.len() != n + 1 {
            return Err(invalid(format!("joint point has length {}, expected {}", z.len(), n + 1)));
        }
        Ok((z.rows(0, n).into_owned(), z[n]))
    }

    /// Per-sample loss, `u = (ℓ − η)/λ` and `ψ*(u)` with derivatives.
    fn term(&self, x: &Vector, eta: f64, sample: SampleId) -> Result<(f64, ConjugateEval)> {
        let loss = self.base.sample_value(x, sample)?;
        let u = (loss - eta) / self.penalty;
        let ev = self.conjugate.eval(u);
        if !(u.is_finite() && ev.value.is_finite() && ev.first.is_finite()) {
            return Err(numeric(format!("conjugate overflow at argument {u:e} for sample {sample}")));
        }
        Ok((loss, ev))
    }

    /// Per-sample curvature `(ψ*)″(u)`, erroring on non-smooth kinks.
    fn curvature(&self, ev: &ConjugateEval, sample: SampleId) -> Result<f64> {
        match ev.second {
            Some(v) if v.is_finite() => Ok(v),
            Some(_) => Err(numeric(format!("conjugate curvature overflow for sample {sample}"))),
            None => Err(Error::Unsupported(format!(
                "second derivative of the conjugate is undefined here (sample {sample})"
            ))),
        }
    }
}

impl<O: StochasticOracle> StochasticOracle for DroDualObjective<O> {
    fn dim(&self) -> usize {
        self.base.dim() + 1
    }

    fn sample_count(&self) -> SampleCount {
        self.base.sample_count()
    }

    fn capabilities(&self) -> Capabilities {
        let b = self.base.capabilities();
        let smooth = self.conjugate.is_smooth();
        Capabilities {
            value: true,
            gradient: true,
            hessian: b.hessian && smooth,
            hvp: b.hessian && smooth,
            full: b.full,
        }
    }

    fn sample_value(&self, z: &Vector, sample: SampleId) -> Result<f64> {
        let (x, eta) = self.split(z)?;
        let (_, ev) = self.term(&x, eta, sample)?;
        Ok(self.penalty * ev.value + eta)
    }

    fn sample_gradient(&self, z: &Vector, sample: SampleId, out: &mut Vector) -> Result<()> {
        let (x, eta) = self.split(z)?;
        let n = x.len();
        let (_, ev) = self.term(&x, eta, sample)?;
        let mut gl = Vector::zeros(n);
        self.base.sample_gradient(&x, sample, &mut gl)?;
        for i in 0..n {
            out[i] = ev.first * gl[i];
        }
        out[n] = 1.0 - ev.first;
        Ok(())
    }

    fn sample_hessian(&self, z: &Vector, sample: SampleId, out: &mut Matrix) -> Result<()> {
        if !self.capabilities().hessian {
            return Err(Error::Unsupported("DRO Hessian needs base Hessians and a smooth conjugate".into()));
        }
        let (x, eta) = self.split(z)?;
        let n = x.len();
        let (_, ev) = self.term(&x, eta, sample)?;
        let curv = self.curvature(&ev, sample)? / self.penalty;
        let mut gl = Vector::zeros(n);
        self.base.sample_gradient(&x, sample, &mut gl)?;
        let mut hl = Matrix::zeros(n, n);
        self.base.sample_hessian(&x, sample, &mut hl)?;
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] = curv * gl[i] * gl[j] + ev.first * hl[(i, j)];
            }
            out[(i, n)] = -curv * gl[i];
            out[(n, i)] = -curv * gl[i];
        }
        out[(n, n)] = curv;
        Ok(())
    }

    fn full_value(&self, z: &Vector) -> Result<f64> {
        match self.sample_count() {
            SampleCount::Finite(m) => dro_value_grad(self, &self.split(z)?.0, z[z.len() - 1], &Batch::full(m)).map(|v| v.0),
            SampleCount::Infinite => Err(Error::Unsupported("full DRO objective of a generative base".into())),
        }
    }
}

/// Batch value and joint gradient `(∇ₓL, ∂ηL)`.
pub fn dro_value_grad<O: StochasticOracle>(
    obj: &DroDualObjective<O>,
    x: &Vector,
    eta: f64,
    batch: &Batch,
) -> Result<(f64, Vector)> {
    let n = obj.base.dim();
    if x.len() != n {
        return Err(invalid("point length does not match the base loss"));
    }
    let mut value = CompensatedSum::new(1);
    let mut grad = CompensatedSum::new(n + 1);
    let mut gl = Vector::zeros(n);
    let mut row = vec![0.0; n + 1];
    for &s in batch.samples() {
        let (_, ev) = obj.term(x, eta, s)?;
        value.add_scalar(obj.penalty * ev.value + eta);
        obj.base.sample_gradient(x, s, &mut gl)?;
        for i in 0..n {
            row[i] = ev.first * gl[i];
        }
        row[n] = 1.0 - ev.first;
        grad.add(&row);
    }
    let m = batch.len() as f64;
    Ok((value.scalar() / m, Vector::from_iterator(n + 1, grad.total().into_iter().map(|v| v / m))))
}

/// Batch joint Hessian `[[A1, A2], [A2ᵀ, A4]]`.
pub fn dro_hessian<O: StochasticOracle>(obj: &DroDualObjective<O>, x: &Vector, eta: f64, batch: &Batch) -> Result<Matrix> {
    crate::oracle::batch_hessian(obj, &obj.join(x, eta), batch)
}

/// `∂ηL` and `∂²ηL` on a batch.
fn eta_derivatives<O: StochasticOracle>(obj: &DroDualObjective<O>, losses: &[f64], eta: f64) -> Result<(f64, f64)> {
    let mut first = CompensatedSum::new(1);
    let mut second = CompensatedSum::new(1);
    for (k, &l) in losses.iter().enumerate() {
        let ev = obj.conjugate.eval((l - eta) / obj.penalty);
        if !ev.first.is_finite() {
            return Err(numeric(format!("conjugate overflow for batch entry {k}")));
        }
        first.add_scalar(ev.first);
        second.add_scalar(ev.second.unwrap_or(0.0));
    }
    let m = losses.len() as f64;
    Ok((1.0 - first.scalar() / m, second.scalar() / (m * obj.penalty)))
}

pub const MAX_ETA_ITERS: usize = 200;

/// Solution of the inner problem in `η`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtaSolution {
    pub eta: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// Minimizes `L(x, ·)` on a batch by safeguarded Newton with bisection.
///
/// Since `(ψ*)′(0) = 1` for every supported conjugate, the root lies in
/// `[min ℓ, max ℓ]`; the bracket is still widened if the signs disagree.
pub fn minimize_eta<O: StochasticOracle>(obj: &DroDualObjective<O>, x: &Vector, batch: &Batch, tol: f64) -> Result<EtaSolution> {
    if !obj.conjugate.is_smooth() {
        return Err(Error::Unsupported("inner η solve needs a strictly convex smooth conjugate".into()));
    }
    let losses: Vec<f64> = batch.samples().iter().map(|&s| obj.base.sample_value(x, s)).collect::<Result<_>>()?;
    let mut lo = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut width = obj.penalty.max(hi - lo).max(1e-8);
    while eta_derivatives(obj, &losses, lo)?.0 > 0.0 {
        lo -= width;
        width *= 2.0;
    }
    width = obj.penalty.max(hi - lo).max(1e-8);
    while eta_derivatives(obj, &losses, hi)?.0 < 0.0 {
        hi += width;
        width *= 2.0;
    }
    let mut sorted = losses.clone();
    sorted.sort_by(f64::total_cmp);
    let mut eta = sorted[sorted.len() / 2];
    for it in 1..=MAX_ETA_ITERS {
        let (g, h) = eta_derivatives(obj, &losses, eta)?;
        if g.abs() <= tol {
            return Ok(EtaSolution { eta, residual: g, iterations: it });
        }
        if g > 0.0 {
            hi = eta;
        } else {
            lo = eta;
        }
        let newton = if h > 0.0 { eta - g / h } else { f64::NAN };
        eta = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= f64::EPSILON * (1.0 + eta.abs()) {
            let (g, _) = eta_derivatives(obj, &losses, eta)?;
            if g.abs() <= tol {
                return Ok(EtaSolution { eta, residual: g, iterations: it });
            }
            return Err(numeric(format!("η bracket collapsed with residual {g:e} above tolerance {tol:e}")));
        }
    }
    Err(numeric("η minimization did not converge in 200 iterations"))
}

/// `Ψ(x) = min_η L(x, η)` and its derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiStationarity {
    pub eta: f64,
    pub value: f64,
    pub grad: Vector,
    /// `A1 − A2 A2ᵀ / A4`, present when Hessians are available.
    pub hessian: Option<Matrix>,
    /// `A1` at `(x, η*)`.
    pub a1: Option<Matrix>,
    /// The mixed block `A2 = ∇_{xη} L` and `A4 = ∂²ηL`.
    pub a2: Option<Vector>,
    pub a4: Option<f64>,
}

impl PsiStationarity {
    pub fn lambda_min(&self) -> Option<f64> {
        self.hessian.as_ref().map(|h| SymmetricEigen::new(h.clone()).eigenvalues.min())
    }

    pub fn a1_lambda_min(&self) -> Option<f64> {
        self.a1.as_ref().map(|h| SymmetricEigen::new(h.clone()).eigenvalues.min())
    }
}

/// Tolerance of the inner solve used by [`psi_stationarity`].
pub const PSI_ETA_TOL: f64 = 1e-12;

/// Evaluates `Ψ` through the inner minimizer `η*`.
///
/// The Hessian is the Schur complement `A1 − A2 A2ᵀ / A4`: differentiating
/// `∂ηL(x, η*(x)) = 0` gives `∇η* = −A2 / A4`, and the chain rule on
/// `∇Ψ(x) = ∇ₓL(x, η*(x))` then subtracts the rank-one term.
pub fn psi_stationarity<O: StochasticOracle>(obj: &DroDualObjective<O>, x: &Vector, batch: &Batch) -> Result<PsiStationarity> {
    let sol = minimize_eta(obj, x, batch, PSI_ETA_TOL)?;
    let n = x.len();
    let (value, grad) = dro_value_grad(obj, x, sol.eta, batch)?;
    let grad_x = grad.rows(0, n).into_owned();
    let (hessian, a1, a2, a4) = if obj.capabilities().hessian {
        let h = dro_hessian(obj, x, sol.eta, batch)?;
        let a1 = h.view((0, 0), (n, n)).into_owned();
        let a2 = h.view((0, n), (n, 1)).column(0).into_owned();
        let a4 = h[(n, n)];
        if !(a4 > 0.0) {
            return Err(numeric("η curvature vanished at the inner minimizer"));
        }
        let schur = &a1 - &a2 * a2.transpose() / a4;
        (Some((&schur + schur.transpose()) * 0.5), Some(a1), Some(a2), Some(a4))
    } else {
        (None, None, None, None)
    };
    Ok(PsiStationarity { eta: sol.eta, value, grad: grad_x, hessian, a1, a2, a4 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{logistic_oracle, make_imbalanced_mixture, LogisticOracle};
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    fn smooth_kinds() -> Vec<Conjugate> {
        vec![
            Conjugate::SmoothedChiSquare,
            Conjugate::Kl,
            Conjugate::SmoothedCvar { alpha: 0.25 },
            Conjugate::SmoothedCvar { alpha: 0.5 },
        ]
    }

    fn logistic(seed: u64) -> LogisticOracle {
        logistic_oracle(make_imbalanced_mixture(3, 3, 6, &[1.0, 0.7, 0.4], seed).unwrap()).unwrap()
    }

    #[test]
    fn table_values() {
        assert_eq!(conjugate_eval(Conjugate::ChiSquare, 0.0).unwrap().value, 0.0);
        assert!((conjugate_eval(Conjugate::Kl, 1.0).unwrap().value - 1.718281828459045).abs() < 1e-15);
        let c = conjugate_eval(Conjugate::SmoothedCvar { alpha: 0.5 }, 0.0).unwrap();
        assert_eq!(c.value, 0.0);
        assert_eq!(c.first, 1.0);
        assert!(conjugate_eval(Conjugate::Cvar { alpha: 1.5 }, 0.0).is_err());
        assert_eq!(Conjugate::Cvar { alpha: 0.5 }.eval(0.0).second, None);
        assert_eq!(Conjugate::ChiSquare.eval(-2.0).second, None);
    }

    #[test]
    fn smoothed_chi_square_breakpoint() {
        let right = -1.0 + 0.25 * 4.0;
        let left = 2.0 * (0f64.exp() - 1.0);
        assert_eq!(right, left);
        let below = Conjugate::SmoothedChiSquare.eval(-1e-12);
        let at = Conjugate::SmoothedChiSquare.eval(0.0);
        assert!((below.first - at.first).abs() < 1e-11 && at.first == 1.0);
        assert!((below.second.unwrap() - at.second.unwrap()).abs() < 1e-11);
    }

    #[test]
    fn conjugate_derivatives_match_differences() {
        for conj in smooth_kinds() {
            for k in 0..1000 {
                let t = -20.0 + 40.0 * (k as f64 + 0.5) / 1000.0;
                if conj == Conjugate::Kl && t > 15.0 {
                    continue;
                }
                let h = 1e-5 * (1.0 + t.abs());
                let (p, m, e) = (conj.eval(t + h), conj.eval(t - h), conj.eval(t));
                let fd1 = (p.value - m.value) / (2.0 * h);
                let fd2 = (p.first - m.first) / (2.0 * h);
                assert!((fd1 - e.first).abs() <= 1e-6 * e.first.abs().max(1e-3), "{conj:?} t={t}");
                let s = e.second.unwrap();
                assert!((fd2 - s).abs() <= 1e-4 * s.abs().max(1e-3), "{conj:?} t={t}");
                assert!(s >= -1e-12);
            }
        }
    }

    #[test]
    fn smoothed_cvar_overflow_branch() {
        for &alpha in &[0.25, 0.5, 0.9] {
            let c = Conjugate::SmoothedCvar { alpha };
            let v = c.eval(700.0);
            assert!(v.value.is_finite() && v.first.is_finite());
            assert!((v.value - (700.0 + alpha.ln()) / alpha).abs() < 1e-9 * v.value);
            // continuity across the switch
            let a = c.eval(CVAR_OVERFLOW_SWITCH);
            let b = c.eval(CVAR_OVERFLOW_SWITCH + 1e-9);
            assert!((a.value - b.value).abs() < 1e-7);
        }
    }

    #[test]
    fn constant_losses_give_zero_eta_gradient() {
        // every loss equals ln 3 at zero parameters
        let base = logistic(0);
        let n = base.dim();
        let obj = DroDualObjective::new(base, Conjugate::SmoothedCvar { alpha: 0.5 }, 1.0).unwrap();
        let x = Vector::zeros(n);
        let batch = Batch::full(obj.base().data().len());
        let (_, g) = dro_value_grad(&obj, &x, 3f64.ln(), &batch).unwrap();
        assert!(g[n].abs() < 1e-15);
        let sol = minimize_eta(&obj, &x, &batch, 1e-12).unwrap();
        assert!((sol.eta - 3f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn large_penalty_tends_to_mean_loss() {
        let base = logistic(1);
        let n = base.dim();
        let x = Vector::from_fn(n, |i, _| 0.1 * ((i % 5) as f64 - 2.0));
        let batch = Batch::full(base.data().len());
        let mean = crate::oracle::batch_value(&base, &x, &batch).unwrap();
        let mut gaps = Vec::new();
        for &pen in &[1.0, 10.0, 100.0, 1000.0] {
            let obj = DroDualObjective::new(base.clone(), Conjugate::SmoothedChiSquare, pen).unwrap();
            let psi = psi_stationarity(&obj, &x, &batch).unwrap();
            gaps.push(psi.value - mean);
        }
        assert!(gaps.iter().all(|g| *g >= -1e-12));
        assert!(gaps.windows(2).all(|w| w[1] < w[0]));
        assert!(gaps[3] < 1e-2);
    }

    #[test]
    fn eta_is_translation_equivariant() {
        struct Shift(LogisticOracle, f64);
        impl StochasticOracle for Shift {
            fn dim(&self) -> usize {
                self.0.dim()
            }
            fn sample_count(&self) -> SampleCount {
                self.0.sample_count()
            }
            fn capabilities(&self) -> Capabilities {
                self.0.capabilities()
            }
            fn sample_value(&self, x: &Vector, s: SampleId) -> Result<f64> {
                Ok(self.0.sample_value(x, s)? + self.1)
            }
            fn sample_gradient(&self, x: &Vector, s: SampleId, out: &mut Vector) -> Result<()> {
                self.0.sample_gradient(x, s, out)
            }
        }
        let base = logistic(2);
        let n = base.dim();
        let x = Vector::from_fn(n, |i, _| 0.05 * i as f64);
        let batch = Batch::full(base.data().len());
        let a = DroDualObjective::new(Shift(base.clone(), 0.0), Conjugate::SmoothedCvar { alpha: 0.25 }, 0.5).unwrap();
        let b = DroDualObjective::new(Shift(base, 3.5), Conjugate::SmoothedCvar { alpha: 0.25 }, 0.5).unwrap();
        let ea = minimize_eta(&a, &x, &batch, 1e-12).unwrap().eta;
        let eb = minimize_eta(&b, &x, &batch, 1e-12).unwrap().eta;
        assert!((eb - ea - 3.5).abs() < 1e-9);
    }

    #[test]
    fn eta_solver_is_fast() {
        let mut rng = SeededRng::from_seed(3);
        for seed in 0..10 {
            let base = logistic(seed);
            let n = base.dim();
            let x = Vector::from_fn(n, |_, _| rng.normal());
            let obj = DroDualObjective::new(base, Conjugate::SmoothedChiSquare, 0.3).unwrap();
            let batch = crate::oracle::draw_batch(&obj, 8, &mut rng).unwrap();
            let sol = minimize_eta(&obj, &x, &batch, 1e-10).unwrap();
            assert!(sol.iterations <= 80 && sol.residual.abs() <= 1e-10);
        }
    }

    #[test]
    fn eta_gradient_is_increasing() {
        let base = logistic(4);
        let n = base.dim();
        let x = Vector::from_fn(n, |i, _| 0.2 * ((i * 7 % 5) as f64 - 2.0));
        let batch = Batch::full(base.data().len());
        let obj = DroDualObjective::new(base, Conjugate::SmoothedCvar { alpha: 0.5 }, 0.7).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for k in 0..100 {
            let eta = -2.0 + 0.05 * k as f64;
            let (_, g) = dro_value_grad(&obj, &x, eta, &batch).unwrap();
            assert!(g[n] > prev);
            prev = g[n];
        }
    }

    #[test]
    fn schur_hessian_matches_difference_of_psi_gradient() {
        let base = logistic(5);
        let n = base.dim();
        let batch = Batch::full(base.data().len());
        let obj = DroDualObjective::new(base, Conjugate::SmoothedChiSquare, 0.5).unwrap();
        let x = Vector::from_fn(n, |i, _| 0.3 * ((i * 3 % 7) as f64 - 3.0) / 3.0);
        let psi = psi_stationarity(&obj, &x, &batch).unwrap();
        let h = psi.hessian.clone().unwrap();
        let step = 1e-5;
        for j in 0..n {
            let mut e = Vector::zeros(n);
            e[j] = step;
            let gp = psi_stationarity(&obj, &(&x + &e), &batch).unwrap().grad;
            let gm = psi_stationarity(&obj, &(&x - &e), &batch).unwrap().grad;
            let col = (gp - gm) / (2.0 * step);
            let err = (&col - h.column(j)).norm();
            assert!(err <= 1e-5 * (1.0 + col.norm()), "column {j}: {err}");
        }
        // Schur complement never exceeds the x-block
        assert!(psi.lambda_min().unwrap() <= psi.a1_lambda_min().unwrap() + 1e-12);
    }

    proptest! {
        #[test]
        fn joint_hessian_is_psd_for_convex_loss(seed in 0u64..200, eta in -2.0f64..3.0) {
            let base = logistic(seed % 7);
            let n = base.dim();
            let mut rng = SeededRng::from_seed(seed);
            let x = Vector::from_fn(n, |_, _| rng.normal());
            let batch = Batch::full(base.data().len());
            let obj = DroDualObjective::new(base, Conjugate::SmoothedCvar { alpha: 0.5 }, 1.0).unwrap();
            let h = dro_hessian(&obj, &x, eta, &batch).unwrap();
            let lmin = SymmetricEigen::new(h).eigenvalues.min();
            prop_assert!(lmin >= -1e-8);
        }
    }
}
