//! Stochastic oracles, batches and batch estimators.
//!
//! An oracle represents `F(x) = E_ξ[f(x; ξ)]`. Finite-sum oracles index their
//! samples `0..N`; generative oracles interpret a sample id as the key of a
//! deterministic noise draw, so re-evaluating the same sample at another point
//! reuses the same realization.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, numeric, Error, Result};
use crate::rng::SeededRng;

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Identifier of one sample ξ.
pub type SampleId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleCount {
    Finite(usize),
    /// ξ ~ P is drawn from a generative model.
    Infinite,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Capabilities {
    pub value: bool,
    pub gradient: bool,
    /// Per-sample analytic Hessians.
    pub hessian: bool,
    /// Per-sample analytic Hessian-vector products.
    pub hvp: bool,
    /// Exact `F`, `∇F` (and `∇²F` when `hessian`) are computable for diagnostics.
    pub full: bool,
}

impl Capabilities {
    pub fn first_order() -> Self {
        Self { value: true, gradient: true, hessian: false, hvp: false, full: true }
    }

    pub fn second_order() -> Self {
        Self { value: true, gradient: true, hessian: true, hvp: true, full: true }
    }
}

pub trait StochasticOracle: Send + Sync {
    fn dim(&self) -> usize;

    fn sample_count(&self) -> SampleCount;

    fn capabilities(&self) -> Capabilities;

    fn sample_value(&self, x: &Vector, sample: SampleId) -> Result<f64>;

    /// Writes `∇f(x; ξ)` into `out` (length `dim`).
    fn sample_gradient(&self, x: &Vector, sample: SampleId, out: &mut Vector) -> Result<()>;

    /// Writes `∇²f(x; ξ)` into `out` (`dim × dim`).
    fn sample_hessian(&self, _x: &Vector, _sample: SampleId, _out: &mut Matrix) -> Result<()> {
        Err(Error::Unsupported("oracle offers no per-sample Hessian".into()))
    }

    /// Writes `∇²f(x; ξ) v` into `out`.
    fn sample_hvp(&self, x: &Vector, v: &Vector, sample: SampleId, out: &mut Vector) -> Result<()> {
        if !self.capabilities().hessian {
            return Err(Error::Unsupported("oracle offers no analytic Hessian-vector product".into()));
        }
        let n = self.dim();
        let mut h = Matrix::zeros(n, n);
        self.sample_hessian(x, sample, &mut h)?;
        out.gemv(1.0, &h, v, 0.0);
        Ok(())
    }

    fn full_value(&self, x: &Vector) -> Result<f64> {
        match self.sample_count() {
            SampleCount::Finite(n) => {
                let mut acc = CompensatedSum::new(1);
                for i in 0..n as u64 {
                    acc.add_scalar(self.sample_value(x, i)?);
                }
                Ok(acc.scalar() / n as f64)
            }
            SampleCount::Infinite => Err(Error::Unsupported("full objective of a generative oracle".into())),
        }
    }

    fn full_gradient(&self, x: &Vector) -> Result<Vector> {
        match self.sample_count() {
            SampleCount::Finite(n) => batch_gradient(self, x, &Batch::full(n)),
            SampleCount::Infinite => Err(Error::Unsupported("full gradient of a generative oracle".into())),
        }
    }

    fn full_hessian(&self, x: &Vector) -> Result<Matrix> {
        match self.sample_count() {
            SampleCount::Finite(n) => batch_hessian(self, x, &Batch::full(n)),
            SampleCount::Infinite => Err(Error::Unsupported("full Hessian of a generative oracle".into())),
        }
    }
}

// lets boxed problems be wrapped, e.g. by the DRO objective
impl<T: StochasticOracle + ?Sized> StochasticOracle for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn sample_count(&self) -> SampleCount {
        (**self).sample_count()
    }

    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }

    fn sample_value(&self, x: &Vector, sample: SampleId) -> Result<f64> {
        (**self).sample_value(x, sample)
    }

    fn sample_gradient(&self, x: &Vector, sample: SampleId, out: &mut Vector) -> Result<()> {
        (**self).sample_gradient(x, sample, out)
    }

    fn sample_hessian(&self, x: &Vector, sample: SampleId, out: &mut Matrix) -> Result<()> {
        (**self).sample_hessian(x, sample, out)
    }

    fn sample_hvp(&self, x: &Vector, v: &Vector, sample: SampleId, out: &mut Vector) -> Result<()> {
        (**self).sample_hvp(x, v, sample, out)
    }

    fn full_value(&self, x: &Vector) -> Result<f64> {
        (**self).full_value(x)
    }

    fn full_gradient(&self, x: &Vector) -> Result<Vector> {
        (**self).full_gradient(x)
    }

    fn full_hessian(&self, x: &Vector) -> Result<Matrix> {
        (**self).full_hessian(x)
    }
}

/// A multiset of sample ids drawn i.i.d. with replacement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    samples: Vec<SampleId>,
}

impl Batch {
    pub fn from_samples(samples: Vec<SampleId>) -> Result<Self> {
        if samples.is_empty() {
            return Err(invalid("batch must contain at least one sample"));
        }
        Ok(Self { samples })
    }

    /// Every index of a finite-sum oracle exactly once, in order.
    pub fn full(n: usize) -> Self {
        Self { samples: (0..n as u64).collect() }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[SampleId] {
        &self.samples
    }
}

pub fn draw_batch<O: StochasticOracle + ?Sized>(oracle: &O, m: usize, rng: &mut SeededRng) -> Result<Batch> {
    if m == 0 {
        return Err(invalid("batch size must be at least 1"));
    }
    let samples = match oracle.sample_count() {
        SampleCount::Finite(n) => {
            if n == 0 {
                return Err(invalid("oracle has no samples"));
            }
            (0..m).map(|_| rng.uniform_index(n) as u64).collect()
        }
        SampleCount::Infinite => (0..m).map(|_| rng.next_u64()).collect(),
    };
    Ok(Batch { samples })
}

/// Neumaier-compensated accumulator over vectors.
#[derive(Debug, Clone)]
pub struct CompensatedSum {
    sum: Vec<f64>,
    comp: Vec<f64>,
}

impl CompensatedSum {
    pub fn new(len: usize) -> Self {
        Self { sum: vec![0.0; len], comp: vec![0.0; len] }
    }

    pub fn add(&mut self, values: &[f64]) {
        for ((s, c), &v) in self.sum.iter_mut().zip(self.comp.iter_mut()).zip(values) {
            let t = *s + v;
            if s.abs() >= v.abs() {
                *c += (*s - t) + v;
            } else {
                *c += (v - t) + *s;
            }
            *s = t;
        }
    }

    pub fn add_scalar(&mut self, v: f64) {
        self.add(std::slice::from_ref(&v));
    }

    pub fn total(&self) -> Vec<f64> {
        self.sum.iter().zip(&self.comp).map(|(s, c)| s + c).collect()
    }

    pub fn scalar(&self) -> f64 {
        self.sum[0] + self.comp[0]
    }
}

fn check_finite(values: &[f64], what: &str, sample: SampleId) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(numeric(format!("non-finite {what} for sample {sample}")))
    }
}

pub fn batch_value<O: StochasticOracle + ?Sized>(oracle: &O, x: &Vector, batch: &Batch) -> Result<f64> {
    let mut acc = CompensatedSum::new(1);
    for &s in batch.samples() {
        let v = oracle.sample_value(x, s)?;
        check_finite(&[v], "value", s)?;
        acc.add_scalar(v);
    }
    Ok(acc.scalar() / batch.len() as f64)
}

/// Mean of per-sample gradients over the batch.
pub fn batch_gradient<O: StochasticOracle + ?Sized>(oracle: &O, x: &Vector, batch: &Batch) -> Result<Vector> {
    let n = oracle.dim();
    if x.len() != n {
        return Err(invalid(format!("point has length {}, oracle dimension is {n}", x.len())));
    }
    let mut acc = CompensatedSum::new(n);
    let mut g = Vector::zeros(n);
    for &s in batch.samples() {
        oracle.sample_gradient(x, s, &mut g)?;
        check_finite(g.as_slice(), "gradient", s)?;
        acc.add(g.as_slice());
    }
    let m = batch.len() as f64;
    Ok(Vector::from_iterator(n, acc.total().into_iter().map(|v| v / m)))
}

/// Mean of per-sample Hessians, symmetrized.
pub fn batch_hessian<O: StochasticOracle + ?Sized>(oracle: &O, x: &Vector, batch: &Batch) -> Result<Matrix> {
    if !oracle.capabilities().hessian {
        return Err(Error::Unsupported("oracle offers no per-sample Hessian".into()));
    }
    let n = oracle.dim();
    let mut acc = CompensatedSum::new(n * n);
    let mut h = Matrix::zeros(n, n);
    for &s in batch.samples() {
        oracle.sample_hessian(x, s, &mut h)?;
        check_finite(h.as_slice(), "Hessian", s)?;
        acc.add(h.as_slice());
    }
    let m = batch.len() as f64;
    let mean = Matrix::from_iterator(n, n, acc.total().into_iter().map(|v| v / m));
    Ok((&mean + mean.transpose()) * 0.5)
}

/// Finite-difference step for Hessian-vector products.
pub fn hvp_step(x: &Vector, v: &Vector) -> f64 {
    f64::EPSILON.cbrt() * (1.0 + x.norm()) / v.norm().max(1.0)
}

/// Batch Hessian-vector product: analytic when the oracle offers it, central
/// differences of the batch gradient otherwise.
pub fn hvp<O: StochasticOracle + ?Sized>(oracle: &O, x: &Vector, v: &Vector, batch: &Batch) -> Result<Vector> {
    let n = oracle.dim();
    if v.len() != n {
        return Err(invalid("direction length does not match oracle dimension"));
    }
    if !v.iter().all(|c| c.is_finite()) {
        return Err(numeric("non-finite direction in Hessian-vector product"));
    }
    if v.iter().all(|&c| c == 0.0) {
        return Ok(Vector::zeros(n));
    }
    if oracle.capabilities().hvp {
        let mut acc = CompensatedSum::new(n);
        let mut hv = Vector::zeros(n);
        for &s in batch.samples() {
            oracle.sample_hvp(x, v, s, &mut hv)?;
            check_finite(hv.as_slice(), "Hessian-vector product", s)?;
            acc.add(hv.as_slice());
        }
        let m = batch.len() as f64;
        return Ok(Vector::from_iterator(n, acc.total().into_iter().map(|c| c / m)));
    }
    fd_hvp(oracle, x, v, batch)
}

/// Central-difference Hessian-vector product from batch gradients.
pub fn fd_hvp<O: StochasticOracle + ?Sized>(oracle: &O, x: &Vector, v: &Vector, batch: &Batch) -> Result<Vector> {
    let h = hvp_step(x, v);
    let plus = batch_gradient(oracle, &(x + v * h), batch)?;
    let minus = batch_gradient(oracle, &(x - v * h), batch)?;
    Ok((plus - minus) / (2.0 * h))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// f(x; i) = ½ (x - a_i)ᵀ A (x - a_i) with shared A.
    struct ShiftedQuadratic {
        a: Matrix,
        centers: Vec<Vector>,
    }

    impl StochasticOracle for ShiftedQuadratic {
        fn dim(&self) -> usize {
            self.a.nrows()
        }
        fn sample_count(&self) -> SampleCount {
            SampleCount::Finite(self.centers.len())
        }
        fn capabilities(&self) -> Capabilities {
            Capabilities::second_order()
        }
        fn sample_value(&self, x: &Vector, s: SampleId) -> Result<f64> {
            let r = x - &self.centers[s as usize];
            Ok(0.5 * r.dot(&(&self.a * &r)))
        }
        fn sample_gradient(&self, x: &Vector, s: SampleId, out: &mut Vector) -> Result<()> {
            let r = x - &self.centers[s as usize];
            out.gemv(1.0, &self.a, &r, 0.0);
            Ok(())
        }
        fn sample_hessian(&self, _x: &Vector, _s: SampleId, out: &mut Matrix) -> Result<()> {
            out.copy_from(&self.a);
            Ok(())
        }
    }

    fn oracle() -> ShiftedQuadratic {
        let a = Matrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.0, 0.2, 0.0, 0.2, 3.0]);
        let centers = (0..10)
            .map(|i| Vector::from_vec(vec![i as f64 * 0.3, -(i as f64) * 0.1, (i % 3) as f64]))
            .collect();
        ShiftedQuadratic { a, centers }
    }

    #[test]
    fn zero_batch_size_is_rejected() {
        let o = oracle();
        let mut rng = SeededRng::from_seed(0);
        assert!(matches!(draw_batch(&o, 0, &mut rng), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn draws_are_deterministic_with_replacement() {
        let o = oracle();
        let b1 = draw_batch(&o, 10, &mut SeededRng::from_seed(0)).unwrap();
        let b2 = draw_batch(&o, 10, &mut SeededRng::from_seed(0)).unwrap();
        assert_eq!(b1, b2);
        assert_eq!(b1.len(), 10);
        assert!(b1.samples().iter().all(|&s| s < 10));
        let big = draw_batch(&o, 200, &mut SeededRng::from_seed(1)).unwrap();
        let mut seen = big.samples().to_vec();
        seen.sort_unstable();
        seen.dedup();
        assert!(seen.len() < 200, "with replacement must repeat");
    }

    #[test]
    fn full_batch_gradient_is_full_gradient() {
        let o = oracle();
        let x = Vector::from_vec(vec![0.3, -1.0, 2.0]);
        let g = batch_gradient(&o, &x, &Batch::full(10)).unwrap();
        assert_eq!(g, o.full_gradient(&x).unwrap());
    }

    #[test]
    fn duplicated_sample_counts_twice() {
        let o = oracle();
        let x = Vector::from_vec(vec![0.1, 0.2, 0.3]);
        let g = batch_gradient(&o, &x, &Batch::from_samples(vec![1, 1, 4]).unwrap()).unwrap();
        let mut g1 = Vector::zeros(3);
        let mut g4 = Vector::zeros(3);
        o.sample_gradient(&x, 1, &mut g1).unwrap();
        o.sample_gradient(&x, 4, &mut g4).unwrap();
        let expect = (g1 * 2.0 + g4) / 3.0;
        assert!((g - expect).norm() < 1e-14);
    }

    #[test]
    fn hessian_of_quadratic_is_constant() {
        let o = oracle();
        let x = Vector::from_vec(vec![5.0, -2.0, 0.0]);
        let h = batch_hessian(&o, &x, &Batch::from_samples(vec![3, 7]).unwrap()).unwrap();
        assert!((h - &o.a).norm() < 1e-15);
    }

    #[test]
    fn hvp_analytic_and_fd_paths() {
        let o = oracle();
        let x = Vector::from_vec(vec![0.5, 0.5, -0.5]);
        let e1 = Vector::from_vec(vec![1.0, 0.0, 0.0]);
        let b = Batch::full(10);
        let hv = hvp(&o, &x, &e1, &b).unwrap();
        assert!((hv - o.a.column(0)).norm() < 1e-14);
        let fd = fd_hvp(&o, &x, &e1, &b).unwrap();
        assert!((fd - o.a.column(0)).norm() < 1e-8);
        assert_eq!(hvp(&o, &x, &Vector::zeros(3), &b).unwrap(), Vector::zeros(3));
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut acc = CompensatedSum::new(1);
        acc.add_scalar(1e16);
        for _ in 0..1000 {
            acc.add_scalar(1.0);
        }
        acc.add_scalar(-1e16);
        assert_eq!(acc.scalar(), 1000.0);
    }
}
