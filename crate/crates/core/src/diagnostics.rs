//! Stationarity certificates, finite-difference validation, Hessian
//! concentration trials and per-class accuracy.

use nalgebra::SymmetricEigen;

use crate::error::{invalid, Error, Result};
use crate::estimators::spectral_norm;
use crate::oracle::{Matrix, StochasticOracle, Vector};
use crate::problems::{ImbalancedDataset, ModelParams};
use crate::rng::SeededRng;

/// Largest dimension for which a dense Hessian eigensolve is attempted.
pub const MAX_CERTIFY_DIM: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Sosp,
    Fosp,
    Neither,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationarityCertificate {
    pub grad_norm: f64,
    pub lambda_min: Option<f64>,
    pub epsilon: f64,
    pub c1: f64,
    pub c2: f64,
    pub verdict: Verdict,
}

impl StationarityCertificate {
    pub fn from_parts(grad_norm: f64, lambda_min: Option<f64>, epsilon: f64, c1: f64, c2: f64) -> Self {
        let fosp = grad_norm <= c1 * epsilon;
        let verdict = match (fosp, lambda_min) {
            (true, Some(l)) if l >= -c2 * epsilon.sqrt() => Verdict::Sosp,
            (true, _) => Verdict::Fosp,
            _ => Verdict::Neither,
        };
        Self { grad_norm, lambda_min, epsilon, c1, c2, verdict }
    }

    pub fn is_fosp(&self) -> bool {
        self.verdict != Verdict::Neither
    }

    pub fn is_sosp(&self) -> bool {
        self.verdict == Verdict::Sosp
    }
}

pub fn min_eigenvalue(h: &Matrix) -> f64 {
    SymmetricEigen::new((h + h.transpose()) * 0.5).eigenvalues.min()
}

/// Certifies `x` from full-batch quantities. The second-order part is
/// evaluated only when `second_order` is set.
pub fn certify<O: StochasticOracle + ?Sized>(
    oracle: &O,
    x: &Vector,
    epsilon: f64,
    c1: f64,
    c2: f64,
    second_order: bool,
) -> Result<StationarityCertificate> {
    if !(epsilon > 0.0 && c1 > 0.0 && c2 > 0.0) {
        return Err(invalid("epsilon, c1 and c2 must be positive"));
    }
    let grad_norm = oracle.full_gradient(x)?.norm();
    let lambda_min = if second_order {
        if oracle.dim() > MAX_CERTIFY_DIM {
            return Err(Error::Unsupported(format!(
                "dense Hessian certificate limited to dimension {MAX_CERTIFY_DIM}"
            )));
        }
        Some(min_eigenvalue(&oracle.full_hessian(x)?))
    } else {
        None
    };
    Ok(StationarityCertificate::from_parts(grad_norm, lambda_min, epsilon, c1, c2))
}

/// Central-difference gradient of a scalar function.
pub fn fd_gradient(f: impl Fn(&Vector) -> Result<f64>, x: &Vector) -> Result<Vector> {
    let mut g = Vector::zeros(x.len());
    let mut y = x.clone();
    for i in 0..x.len() {
        let h = f64::EPSILON.cbrt() * (1.0 + x[i].abs());
        y[i] = x[i] + h;
        let p = f(&y)?;
        y[i] = x[i] - h;
        let m = f(&y)?;
        y[i] = x[i];
        g[i] = (p - m) / (2.0 * h);
    }
    Ok(g)
}

/// Central-difference Jacobian of a vector function, one column per coordinate.
pub fn fd_jacobian(f: impl Fn(&Vector) -> Result<Vector>, x: &Vector) -> Result<Matrix> {
    let mut y = x.clone();
    let mut cols = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let h = f64::EPSILON.cbrt() * (1.0 + x[i].abs());
        y[i] = x[i] + h;
        let p = f(&y)?;
        y[i] = x[i] - h;
        let m = f(&y)?;
        y[i] = x[i];
        cols.push((p - m) / (2.0 * h));
    }
    Ok(Matrix::from_columns(&cols))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdOrder {
    Gradient,
    Hessian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub order: FdOrder,
    pub max_rel_error: f64,
    /// Entry with the largest deviation, `(row, column)`; column 0 for gradients.
    pub worst: (usize, usize),
    pub tol: f64,
    pub pass: bool,
}

/// Relative deviation of `analytic` from `reference`, entrywise, with a floor
/// proportional to the reference scale so that near-zero entries are judged
/// against the magnitude of the whole object.
pub fn max_relative_deviation(analytic: &Matrix, reference: &Matrix) -> (f64, (usize, usize)) {
    let scale = 1e-6 * (1.0 + reference.amax());
    let mut worst = (0.0, (0, 0));
    for j in 0..reference.ncols() {
        for i in 0..reference.nrows() {
            let r = reference[(i, j)];
            let e = (analytic[(i, j)] - r).abs() / r.abs().max(scale);
            if e > worst.0 || e.is_nan() {
                worst = (e, (i, j));
            }
        }
    }
    worst
}

/// Compares analytic full-batch derivatives with central differences of the
/// next-lower order.
pub fn fd_validate<O: StochasticOracle + ?Sized>(oracle: &O, x: &Vector, order: FdOrder, tol: f64) -> Result<FdReport> {
    let (analytic, reference) = match order {
        FdOrder::Gradient => {
            let g = oracle.full_gradient(x)?;
            let fd = fd_gradient(|y| oracle.full_value(y), x)?;
            (Matrix::from_column_slice(g.len(), 1, g.as_slice()), Matrix::from_column_slice(fd.len(), 1, fd.as_slice()))
        }
        FdOrder::Hessian => (oracle.full_hessian(x)?, fd_jacobian(|y| oracle.full_gradient(y), x)?),
    };
    let (max_rel_error, worst) = max_relative_deviation(&analytic, &reference);
    Ok(FdReport { order, max_rel_error, worst, tol, pass: max_rel_error <= tol })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationReport {
    pub n: usize,
    pub sigma: f64,
    pub m: usize,
    pub trials: usize,
    /// Empirical `E‖(1/m)Σ Aᵢ − B‖²`.
    pub mean_sq_deviation: f64,
    /// `22σ² ln(n) / m`.
    pub bound: f64,
    pub pass: bool,
}

/// `‖(1/m)Σ Aᵢ − B‖²` in spectral norm.
pub fn concentration_deviation(samples: &[Matrix], b: &Matrix) -> f64 {
    let mut mean = Matrix::zeros(b.nrows(), b.ncols());
    for a in samples {
        mean += a;
    }
    mean /= samples.len() as f64;
    spectral_norm(&(mean - b)).powi(2)
}

/// Monte Carlo check of the matrix concentration bound with `B = 0` and
/// symmetric Gaussian `Aᵢ` scaled to Frobenius norm `σ`, so `‖Aᵢ‖ ≤ σ`.
pub fn hessian_concentration_trial(n: usize, sigma: f64, m: usize, trials: usize, rng: &mut SeededRng) -> Result<ConcentrationReport> {
    if n < 2 || m == 0 || trials == 0 {
        return Err(invalid("need n >= 2, m >= 1 and at least one trial"));
    }
    let mut total = 0.0;
    let mut a = Matrix::zeros(n, n);
    let mut sum = Matrix::zeros(n, n);
    for _ in 0..trials {
        sum.fill(0.0);
        for _ in 0..m {
            let mut fro = 0.0;
            for j in 0..n {
                for i in 0..=j {
                    let v = if i == j { rng.normal() } else { rng.normal() * std::f64::consts::FRAC_1_SQRT_2 };
                    a[(i, j)] = v;
                    a[(j, i)] = v;
                    fro += if i == j { v * v } else { 2.0 * v * v };
                }
            }
            sum += &a * (sigma / fro.sqrt());
        }
        sum /= m as f64;
        total += spectral_norm(&sum).powi(2);
    }
    let mean_sq_deviation = total / trials as f64;
    let bound = 22.0 * sigma * sigma * (n as f64).ln() / m as f64;
    Ok(ConcentrationReport { n, sigma, m, trials, mean_sq_deviation, bound, pass: mean_sq_deviation <= bound })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassAccuracy {
    /// `NaN` for classes without test samples.
    pub per_class: Vec<f64>,
    pub worst: f64,
    pub overall: f64,
}

pub fn per_class_accuracy(params: &ModelParams, data: &ImbalancedDataset) -> Result<ClassAccuracy> {
    let shape = params.shape;
    if shape.features() != data.n_features() || shape.classes() != data.n_classes {
        return Err(invalid("classifier shape does not match the dataset"));
    }
    let k = data.n_classes;
    let mut hits = vec![0usize; k];
    let mut counts = vec![0usize; k];
    let p = params.values.as_slice();
    for (i, &y) in data.labels.iter().enumerate() {
        let row: Vec<f64> = data.features.row(i).iter().copied().collect();
        counts[y] += 1;
        if shape.predict(p, &row) == y {
            hits[y] += 1;
        }
    }
    let per_class: Vec<f64> = hits.iter().zip(&counts).map(|(&h, &c)| if c == 0 { f64::NAN } else { h as f64 / c as f64 }).collect();
    let worst = per_class.iter().copied().filter(|v| !v.is_nan()).fold(f64::INFINITY, f64::min);
    let total: usize = counts.iter().sum();
    let overall = if total == 0 { f64::NAN } else { hits.iter().sum::<usize>() as f64 / total as f64 };
    Ok(ClassAccuracy { per_class, worst, overall })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{Capabilities, SampleCount, SampleId};
    use crate::problems::{logistic_oracle, make_imbalanced_mixture, make_quadratic, make_quartic_saddle, ModelShape};
    use proptest::prelude::*;

    #[test]
    fn quartic_certificates() {
        let q = make_quartic_saddle(4, 0.0).unwrap();
        let c = certify(&q, &Vector::zeros(4), 0.01, 1.0, 1.0, true).unwrap();
        assert_eq!(c.grad_norm, 0.0);
        assert_eq!(c.lambda_min, Some(-1.0));
        assert_eq!(c.verdict, Verdict::Fosp);
        let c = certify(&q, &Vector::from_vec(vec![1.0, 0.0, 0.0, 0.0]), 0.01, 1.0, 1.0, true).unwrap();
        assert_eq!(c.verdict, Verdict::Sosp);
    }

    #[test]
    fn psd_quadratic_minimizer_is_sosp() {
        let a = Matrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let f = make_quadratic(a, None).unwrap();
        for &e in &[1e-6, 1e-2, 0.5] {
            assert!(certify(&f, &Vector::zeros(2), e, 1.0, 1.0, true).unwrap().is_sosp());
        }
    }

    proptest! {
        #[test]
        fn verdict_is_monotone_in_epsilon(g in 0.0f64..1.0, l in -1.0f64..1.0, e1 in 1e-4f64..1.0, e2 in 1e-4f64..1.0) {
            let (lo, hi) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
            let a = StationarityCertificate::from_parts(g, Some(l), lo, 1.0, 1.0);
            let b = StationarityCertificate::from_parts(g, Some(l), hi, 1.0, 1.0);
            if a.is_sosp() { prop_assert!(b.is_sosp()); }
            if a.is_fosp() { prop_assert!(b.is_fosp()); }
        }
    }

    #[test]
    fn fd_passes_on_analytic_oracles() {
        let data = make_imbalanced_mixture(3, 3, 5, &[1.0, 0.8, 0.6], 0).unwrap();
        let lo = logistic_oracle(data).unwrap();
        let mut rng = SeededRng::from_seed(1);
        let x = Vector::from_fn(lo.dim(), |_, _| 0.5 * rng.normal());
        assert!(fd_validate(&lo, &x, FdOrder::Gradient, 1e-5).unwrap().pass);
        assert!(fd_validate(&lo, &x, FdOrder::Hessian, 1e-3).unwrap().pass);
        let q = make_quartic_saddle(4, 0.3).unwrap();
        let x = Vector::from_vec(vec![0.3, -1.2, 0.7, 2.0]);
        assert!(fd_validate(&q, &x, FdOrder::Hessian, 1e-3).unwrap().pass);
        assert!(fd_validate(&q, &x, FdOrder::Gradient, 1e-5).unwrap().pass);
    }

    #[test]
    fn fd_names_corrupted_component() {
        struct Corrupt(crate::problems::QuarticSaddle);
        impl StochasticOracle for Corrupt {
            fn dim(&self) -> usize {
                self.0.dim()
            }
            fn sample_count(&self) -> SampleCount {
                SampleCount::Infinite
            }
            fn capabilities(&self) -> Capabilities {
                Capabilities::first_order()
            }
            fn sample_value(&self, x: &Vector, s: SampleId) -> Result<f64> {
                self.0.sample_value(x, s)
            }
            fn sample_gradient(&self, x: &Vector, s: SampleId, out: &mut Vector) -> Result<()> {
                self.0.sample_gradient(x, s, out)
            }
            fn full_value(&self, x: &Vector) -> Result<f64> {
                self.0.full_value(x)
            }
            fn full_gradient(&self, x: &Vector) -> Result<Vector> {
                let mut g = self.0.full_gradient(x)?;
                g[2] *= 1.01;
                Ok(g)
            }
        }
        let o = Corrupt(make_quartic_saddle(4, 0.0).unwrap());
        let r = fd_validate(&o, &Vector::from_vec(vec![0.5, 1.0, 1.5, -0.5]), FdOrder::Gradient, 1e-5).unwrap();
        assert!(!r.pass);
        assert_eq!(r.worst, (2, 0));
    }

    #[test]
    fn single_rank_one_sample() {
        let sigma = 1.7;
        let mut u = Vector::from_vec(vec![1.0, 2.0, -1.0]);
        u.normalize_mut();
        let a = &u * u.transpose() * sigma;
        let dev = concentration_deviation(&[a], &Matrix::zeros(3, 3));
        assert!((dev - sigma * sigma).abs() < 1e-12);
        assert!(dev <= 22.0 * sigma * sigma * 3f64.ln());
    }

    #[test]
    fn concentration_within_bound_and_scales() {
        let mut rng = SeededRng::from_seed(7);
        let r = hessian_concentration_trial(10, 1.0, 100, 200, &mut rng).unwrap();
        assert!(r.pass && (r.bound - 0.5065).abs() < 1e-3);
        let small = hessian_concentration_trial(6, 1.0, 10, 200, &mut rng).unwrap();
        let large = hessian_concentration_trial(6, 1.0, 1000, 200, &mut rng).unwrap();
        let ratio = small.mean_sq_deviation / large.mean_sq_deviation;
        assert!(ratio > 50.0 && ratio < 200.0, "{ratio}");
    }

    #[test]
    fn accuracy_of_constant_and_perfect_classifiers() {
        let data = make_imbalanced_mixture(3, 3, 10, &[1.0, 0.5, 0.3], 2).unwrap();
        let shape = ModelShape::Logistic { features: 3, classes: 3 };
        let mut v = Vector::zeros(shape.param_count());
        v[3] = 1.0; // bias of class 0
        let acc = per_class_accuracy(&ModelParams::new(v, shape).unwrap(), &data).unwrap();
        assert_eq!(acc.per_class, vec![1.0, 0.0, 0.0]);
        assert_eq!(acc.worst, 0.0);
        assert_eq!(acc.overall, 10.0 / 18.0);
        let share: f64 = data.class_counts().iter().zip(&acc.per_class).map(|(&c, a)| c as f64 / 18.0 * a).sum();
        assert_eq!(share, acc.overall);
        // a huge scaling of the class-mean directions classifies the clusters well
        let mut w = Vector::zeros(shape.param_count());
        for k in 0..3 {
            w[k * 4 + k] = 100.0;
        }
        let acc = per_class_accuracy(&ModelParams::new(w, shape).unwrap(), &data).unwrap();
        assert!(acc.overall > 0.8);
    }
}
