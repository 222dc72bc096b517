//! Gradient and Hessian estimators, theorem batch sizing, and empirical fits
//! of the smoothness and variance constants.

use log::warn;
use nalgebra::SymmetricEigen;

use crate::error::{invalid, Result};
use crate::oracle::{batch_gradient, draw_batch, StochasticOracle, Vector};
use crate::rng::SeededRng;

/// Upper limit on any schedule-derived batch size.
pub const MAX_BATCH: usize = 10_000_000;

/// Ceils a theorem-derived count. Values within a relative `1e-9` of an
/// integer are rounded to it, so `1/0.05` gives 20 rather than 21.
pub fn ceil_count(value: f64) -> usize {
    if !(value > 0.0) {
        return 1;
    }
    let r = value.round();
    let c = if (value - r).abs() <= 1e-9 * value { r } else { value.ceil() };
    if c >= usize::MAX as f64 {
        usize::MAX
    } else {
        (c as usize).max(1)
    }
}

/// [`ceil_count`] with the desk-scale cap applied.
pub fn batch_count(value: f64, what: &str) -> usize {
    let c = ceil_count(value);
    if c > MAX_BATCH {
        warn!("{what} batch size {c} capped at {MAX_BATCH}");
        MAX_BATCH
    } else {
        c
    }
}

/// `|S2| = ⌈22 ln(n) / ε⌉`, at least 1.
pub fn hessian_batch_size(epsilon: f64, n: usize) -> usize {
    let n = n.max(1) as f64;
    batch_count(22.0 * n.ln() / epsilon, "Hessian")
}

/// Recursive SPIDER gradient state.
#[derive(Debug, Clone)]
pub struct SpiderState {
    g_prev: Option<Vector>,
    x_prev: Option<Vector>,
    counter: usize,
    q: usize,
}

#[derive(Debug, Clone)]
pub struct SpiderOutput {
    pub g: Vector,
    pub samples_used: usize,
    pub restarted: bool,
}

impl SpiderState {
    pub fn new(q: usize) -> Result<Self> {
        if q == 0 {
            return Err(invalid("restart period q must be at least 1"));
        }
        Ok(Self { g_prev: None, x_prev: None, counter: 0, q })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn counter(&self) -> usize {
        self.counter
    }

    /// Whether the next call draws a fresh `S1` batch.
    pub fn next_is_restart(&self) -> bool {
        self.counter == 0 || self.g_prev.is_none()
    }

    /// Seeds the state with a known gradient at a known point; the next call
    /// applies a correction.
    pub fn set_anchor(&mut self, x: Vector, g: Vector) {
        self.x_prev = Some(x);
        self.g_prev = Some(g);
        self.counter = 1 % self.q;
    }
}

/// One SPIDER step. On restart the estimate is a plain `s1` minibatch mean;
/// otherwise `g_{t−1} + ∇f(x_t; S3) − ∇f(x_{t−1}; S3)` with one shared `S3`.
pub fn spider_gradient<O: StochasticOracle + ?Sized>(
    state: &mut SpiderState,
    oracle: &O,
    x: &Vector,
    s1: usize,
    s3: usize,
    rng: &mut SeededRng,
) -> Result<SpiderOutput> {
    let restart = state.next_is_restart();
    let (g, used) = if restart {
        let batch = draw_batch(oracle, s1, rng)?;
        (batch_gradient(oracle, x, &batch)?, s1)
    } else {
        let (g_prev, x_prev) = (state.g_prev.as_ref().unwrap(), state.x_prev.as_ref().unwrap());
        if x_prev.len() != x.len() {
            return Err(invalid("iterate dimension changed between SPIDER steps"));
        }
        let batch = draw_batch(oracle, s3, rng)?;
        let now = batch_gradient(oracle, x, &batch)?;
        let before = batch_gradient(oracle, x_prev, &batch)?;
        (g_prev + now - before, s3)
    };
    state.g_prev = Some(g.clone());
    state.x_prev = Some(x.clone());
    state.counter = (state.counter + 1) % state.q;
    Ok(SpiderOutput { g, samples_used: used, restarted: restart })
}

/// Least-squares fit `v ≈ a + b·s` with nonnegative coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceFit {
    /// `√a`, i.e. `G0` or `K0`.
    pub c0: f64,
    /// `√b`, i.e. `G1` or `K1`.
    pub c1: f64,
    /// Root-mean-square residual of the fit.
    pub residual: f64,
    pub mean_variance: f64,
    /// Residual above 25% of the mean variance.
    pub misfit: bool,
    /// `(‖∇F(x)‖², measured variance)` per probe point.
    pub points: Vec<(f64, f64)>,
}

fn nonneg_least_squares(points: &[(f64, f64)]) -> (f64, f64) {
    let m = points.len() as f64;
    let sx = points.iter().map(|p| p.0).sum::<f64>() / m;
    let sy = points.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx = points.iter().map(|p| (p.0 - sx).powi(2)).sum::<f64>();
    let sxy = points.iter().map(|p| (p.0 - sx) * (p.1 - sy)).sum::<f64>();
    let (mut a, mut b) = if sxx > 1e-300 { (sy - sxy / sxx * sx, sxy / sxx) } else { (sy, 0.0) };
    if b < 0.0 {
        b = 0.0;
        a = sy;
    }
    if a < 0.0 {
        a = 0.0;
        let ss = points.iter().map(|p| p.0 * p.0).sum::<f64>();
        b = if ss > 0.0 { points.iter().map(|p| p.0 * p.1).sum::<f64>() / ss } else { 0.0 };
        b = b.max(0.0);
    }
    (a, b)
}

fn fit_variance(points: Vec<(f64, f64)>) -> VarianceFit {
    let (a, b) = nonneg_least_squares(&points);
    let m = points.len() as f64;
    let mean = points.iter().map(|p| p.1).sum::<f64>() / m;
    let residual = (points.iter().map(|p| (a + b * p.0 - p.1).powi(2)).sum::<f64>() / m).sqrt();
    VarianceFit { c0: a.sqrt(), c1: b.sqrt(), residual, mean_variance: mean, misfit: mean > 0.0 && residual > 0.25 * mean, points }
}

/// Monte Carlo estimate of `(G0, G1)` in `E‖∇f(x;ξ) − ∇F(x)‖² ≤ G0² + G1²‖∇F(x)‖²`.
pub fn estimate_gradient_variance<O: StochasticOracle + ?Sized>(
    oracle: &O,
    probe_points: &[Vector],
    trials: usize,
    rng: &mut SeededRng,
) -> Result<VarianceFit> {
    if probe_points.len() < 2 {
        return Err(invalid("need at least two probe points"));
    }
    let n = oracle.dim();
    let mut points = Vec::with_capacity(probe_points.len());
    let mut g = Vector::zeros(n);
    for x in probe_points {
        let full = oracle.full_gradient(x)?;
        let batch = draw_batch(oracle, trials, rng)?;
        let mut acc = 0.0;
        for &s in batch.samples() {
            oracle.sample_gradient(x, s, &mut g)?;
            acc += (&g - &full).norm_squared();
        }
        points.push((full.norm_squared(), acc / trials as f64));
    }
    Ok(fit_variance(points))
}

/// Monte Carlo estimate of `(K0, K1)` for spectral-norm Hessian deviations.
pub fn estimate_hessian_variance<O: StochasticOracle + ?Sized>(
    oracle: &O,
    probe_points: &[Vector],
    trials: usize,
    rng: &mut SeededRng,
) -> Result<VarianceFit> {
    if probe_points.len() < 2 {
        return Err(invalid("need at least two probe points"));
    }
    let n = oracle.dim();
    let mut points = Vec::with_capacity(probe_points.len());
    let mut h = crate::oracle::Matrix::zeros(n, n);
    for x in probe_points {
        let full = oracle.full_hessian(x)?;
        let grad = oracle.full_gradient(x)?;
        let batch = draw_batch(oracle, trials, rng)?;
        let mut acc = 0.0;
        for &s in batch.samples() {
            oracle.sample_hessian(x, s, &mut h)?;
            acc += spectral_norm(&(&h - &full)).powi(2);
        }
        points.push((grad.norm_squared(), acc / trials as f64));
    }
    Ok(fit_variance(points))
}

pub(crate) fn spectral_norm(m: &crate::oracle::Matrix) -> f64 {
    if m.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    SymmetricEigen::new((m + m.transpose()) * 0.5).eigenvalues.amax()
}

/// Fitted generalized smoothness constants.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothnessFit {
    pub l0: f64,
    pub l1: f64,
    /// `None` when the oracle has no Hessian.
    pub m0: Option<f64>,
    pub m1: Option<f64>,
    pub pairs_used: usize,
}

/// Smallest line `r ≤ a + b·s` with `a, b ≥ 0` above every point, minimizing
/// the mean gap. Candidates are the upper hull edges and the two axis cases.
fn upper_envelope(points: &[(f64, f64)]) -> (f64, f64) {
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    pts.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)));
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while hull.len() >= 2 {
            let (o, a) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (a.0 - o.0) * (p.1 - o.1) - (a.1 - o.1) * (p.0 - o.0);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    let mean_s = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let feasible = |a: f64, b: f64| pts.iter().all(|p| a + b * p.0 >= p.1 * (1.0 - 1e-12) - 1e-300);
    let mut best = (pts.iter().map(|p| p.1).fold(0.0, f64::max), 0.0);
    let cost = |(a, b): (f64, f64)| a + b * mean_s;
    if pts.iter().all(|p| p.0 > 0.0) {
        let b = pts.iter().map(|p| p.1 / p.0).fold(0.0, f64::max);
        if cost((0.0, b)) < cost(best) {
            best = (0.0, b);
        }
    }
    for w in hull.windows(2) {
        let (p, q) = (w[0], w[1]);
        if q.0 - p.0 <= 0.0 {
            continue;
        }
        let b = (q.1 - p.1) / (q.0 - p.0);
        let a = p.1 - b * p.0;
        if a >= 0.0 && b >= 0.0 && feasible(a, b) && cost((a, b)) < cost(best) {
            best = (a, b);
        }
    }
    best
}

/// Fits `‖∇F(x) − ∇F(x′)‖ / ‖x − x′‖ ≤ L0 + L1 min(‖∇F(x)‖, ‖∇F(x′)‖)` (and
/// the Hessian analog) over every unordered pair of trajectory points closer
/// than `radius`. Pairs closer than `1e-12` are skipped.
pub fn estimate_smoothness<O: StochasticOracle + ?Sized>(
    oracle: &O,
    trajectory: &[Vector],
    radius: f64,
) -> Result<SmoothnessFit> {
    if trajectory.len() < 3 {
        return Err(invalid("trajectory needs at least three points"));
    }
    let grads: Vec<Vector> = trajectory.iter().map(|x| oracle.full_gradient(x)).collect::<Result<_>>()?;
    let hess = if oracle.capabilities().hessian {
        Some(trajectory.iter().map(|x| oracle.full_hessian(x)).collect::<Result<Vec<_>>>()?)
    } else {
        None
    };
    let mut first = Vec::new();
    let mut second = Vec::new();
    for i in 0..trajectory.len() {
        for j in i + 1..trajectory.len() {
            let dist = (&trajectory[i] - &trajectory[j]).norm();
            if dist < 1e-12 || dist > radius {
                continue;
            }
            let s = grads[i].norm().min(grads[j].norm());
            first.push((s, (&grads[i] - &grads[j]).norm() / dist));
            if let Some(h) = &hess {
                second.push((s, spectral_norm(&(&h[i] - &h[j])) / dist));
            }
        }
    }
    if first.is_empty() {
        return Err(invalid("no usable pairs within the radius"));
    }
    let (l0, l1) = upper_envelope(&first);
    let (m0, m1) = if hess.is_some() {
        let (a, b) = upper_envelope(&second);
        (Some(a), Some(b))
    } else {
        (None, None)
    };
    Ok(SmoothnessFit { l0, l1, m0, m1, pairs_used: first.len() })
}
