//! Desk-scale test problems with analytic derivatives, and a synthetic
//! imbalanced classification generator.

use std::io::{Read, Write};

use crate::error::{invalid, numeric, Error, Result};
use crate::oracle::{Capabilities, Matrix, SampleCount, SampleId, StochasticOracle, Vector};
use crate::rng::{sample_normals, Purpose, SeededRng};

/// `F(x) = ¼ Σ xᵢ⁴ − ½ x₁²` with additive Gaussian gradient noise.
///
/// The origin is a strict saddle (`λ_min = −1`) and `(±1, 0, …, 0)` are the
/// global minimizers with `F* = −¼`. A sample ξ adds `σ ξᵀx` to the value and
/// `σ ξ` to the gradient; Hessians are noise-free.
#[derive(Debug, Clone)]
pub struct QuarticSaddle {
    n: usize,
    sigma: f64,
}

const QUARTIC_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

pub fn make_quartic_saddle(n: usize, noise_sigma: f64) -> Result<QuarticSaddle> {
    if n < 2 {
        return Err(invalid("quartic saddle needs n >= 2"));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(invalid("noise level must be finite and nonnegative"));
    }
    Ok(QuarticSaddle { n, sigma: noise_sigma })
}

impl QuarticSaddle {
    pub fn noise_sigma(&self) -> f64 {
        self.sigma
    }

    /// Optimal value `F* = −¼`.
    pub fn optimal_value(&self) -> f64 {
        -0.25
    }

    fn value(&self, x: &Vector) -> f64 {
        0.25 * x.iter().map(|v| v.powi(4)).sum::<f64>() - 0.5 * x[0] * x[0]
    }

    fn gradient_into(&self, x: &Vector, out: &mut Vector) {
        for (o, v) in out.iter_mut().zip(x.iter()) {
            *o = v * v * v;
        }
        out[0] -= x[0];
    }

    fn noise(&self, sample: SampleId) -> Vec<f64> {
        let mut xi = vec![0.0; self.n];
        sample_normals(sample, QUARTIC_SALT, &mut xi);
        xi
    }
}

impl StochasticOracle for QuarticSaddle {
    fn dim(&self) -> usize {
        self.n
    }

    fn sample_count(&self) -> SampleCount {
        SampleCount::Infinite
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities::second_order()
    }

    fn sample_value(&self, x: &Vector, sample: SampleId) -> Result<f64> {
        let mut f = self.value(x);
        if self.sigma > 0.0 {
            let xi = self.noise(sample);
            f += self.sigma * xi.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>();
        }
        Ok(f)
    }

    fn sample_gradient(&self, x: &Vector, sample: SampleId, out: &mut Vector) -> Result<()> {
        self.gradient_into(x, out);
        if self.sigma > 0.0 {
            for (o, xi) in out.iter_mut().zip(self.noise(sample)) {
                *o += self.sigma * xi;
            }
        }
        Ok(())
    }

    fn sample_hessian(&self, x: &Vector, _sample: SampleId, out: &mut Matrix) -> Result<()> {
        out.fill(0.0);
        for i in 0..self.n {
            out[(i, i)] = 3.0 * x[i] * x[i];
        }
        out[(0, 0)] -= 1.0;
        Ok(())
    }

    fn sample_hvp(&self, x: &Vector, v: &Vector, _sample: SampleId, out: &mut Vector) -> Result<()> {
        for i in 0..self.n {
            out[i] = 3.0 * x[i] * x[i] * v[i];
        }
        out[0] -= v[0];
        Ok(())
    }

    fn full_value(&self, x: &Vector) -> Result<f64> {
        Ok(self.value(x))
    }

    fn full_gradient(&self, x: &Vector) -> Result<Vector> {
        let mut g = Vector::zeros(self.n);
        self.gradient_into(x, &mut g);
        Ok(g)
    }

    fn full_hessian(&self, x: &Vector) -> Result<Matrix> {
        let mut h = Matrix::zeros(self.n, self.n);
        self.sample_hessian(x, 0, &mut h)?;
        Ok(h)
    }
}

/// `F(x) = Σ (e^{xᵢ} − xᵢ)`: `(L0, L1) = (1, 1)`-smooth but not Lipschitz-smooth.
#[derive(Debug, Clone)]
pub struct ExpScalar {
    n: usize,
}

pub fn make_exp_scalar(n: usize) -> Result<ExpScalar> {
    if n == 0 {
        return Err(invalid("dimension must be at least 1"));
    }
    Ok(ExpScalar { n })
}

impl ExpScalar {
    fn guard(&self, x: &Vector) -> Result<()> {
        if let Some(v) = x.iter().find(|v| **v > 700.0 || !v.is_finite()) {
            return Err(numeric(format!("exp overflow guard: entry {v}")));
        }
        Ok(())
    }
}

impl StochasticOracle for ExpScalar {
    fn dim(&self) -> usize {
        self.n
    }

    fn sample_count(&self) -> SampleCount {
        SampleCount::Finite(1)
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities::second_order()
    }

    fn sample_value(&self, x: &Vector, _sample: SampleId) -> Result<f64> {
        self.guard(x)?;
        Ok(x.iter().map(|v| v.exp() - v).sum())
    }

    fn sample_gradient(&self, x: &Vector, _sample: SampleId, out: &mut Vector) -> Result<()> {
        self.guard(x)?;
        for (o, v) in out.iter_mut().zip(x.iter()) {
            *o = v.exp_m1();
        }
        Ok(())
    }

    fn sample_hessian(&self, x: &Vector, _sample: SampleId, out: &mut Matrix) -> Result<()> {
        self.guard(x)?;
        out.fill(0.0);
        for i in 0..self.n {
            out[(i, i)] = x[i].exp();
        }
        Ok(())
    }
}

/// Deterministic quadratic `½ xᵀAx + bᵀx`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    a: Matrix,
    b: Vector,
}

pub fn make_quadratic(a: Matrix, b: Option<Vector>) -> Result<Quadratic> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(invalid("quadratic needs a square nonempty matrix"));
    }
    let b = b.unwrap_or_else(|| Vector::zeros(n));
    if b.len() != n {
        return Err(invalid("linear term has the wrong length"));
    }
    let a = (&a + a.transpose()) * 0.5;
    Ok(Quadratic { a, b })
}

impl Quadratic {
    pub fn matrix(&self) -> &Matrix {
        &self.a
    }
}

impl StochasticOracle for Quadratic {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn sample_count(&self) -> SampleCount {
        SampleCount::Finite(1)
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities::second_order()
    }

    fn sample_value(&self, x: &Vector, _sample: SampleId) -> Result<f64> {
        Ok(0.5 * x.dot(&(&self.a * x)) + self.b.dot(x))
    }

    fn sample_gradient(&self, x: &Vector, _sample: SampleId, out: &mut Vector) -> Result<()> {
        out.gemv(1.0, &self.a, x, 0.0);
        *out += &self.b;
        Ok(())
    }

    fn sample_hessian(&self, _x: &Vector, _sample: SampleId, out: &mut Matrix) -> Result<()> {
        out.copy_from(&self.a);
        Ok(())
    }
}

/// Labelled feature matrix with a per-class keep ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct ImbalancedDataset {
    /// One row per sample.
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub class_ratios: Vec<f64>,
}

impl ImbalancedDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Writes `label,f0,…,f{d−1}` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["label".to_string()];
        header.extend((0..self.n_features()).map(|j| format!("f{j}")));
        w.write_record(&header).map_err(io_err)?;
        for (i, &y) in self.labels.iter().enumerate() {
            let mut row = vec![y.to_string()];
            row.extend(self.features.row(i).iter().map(|v| format!("{v:e}")));
            w.write_record(&row).map_err(io_err)?;
        }
        w.flush().map_err(|e| io_err(e.into()))?;
        Ok(())
    }

    /// Reads a dataset written by [`ImbalancedDataset::write_csv`]. Class ratios
    /// are not stored in the file and are reconstructed relative to the largest class.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers().map_err(io_err)?.clone();
        if header.get(0) != Some("label") {
            return Err(invalid("dataset CSV must start with a 'label' column"));
        }
        let d = header.len() - 1;
        for (j, h) in header.iter().skip(1).enumerate() {
            if h != format!("f{j}") {
                return Err(invalid(format!("unexpected feature column '{h}'")));
            }
        }
        let mut labels = Vec::new();
        let mut values = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(io_err)?;
            if rec.len() != d + 1 {
                return Err(invalid(format!("row {} has {} fields, expected {}", line + 2, rec.len(), d + 1)));
            }
            labels.push(rec[0].parse::<usize>().map_err(|e| invalid(format!("row {}: {e}", line + 2)))?);
            for f in rec.iter().skip(1) {
                values.push(f.parse::<f64>().map_err(|e| invalid(format!("row {}: {e}", line + 2)))?);
            }
        }
        let n_classes = labels.iter().max().map_or(0, |m| m + 1);
        let features = Matrix::from_row_slice(labels.len(), d, &values);
        let mut counts = vec![0usize; n_classes];
        for &y in &labels {
            counts[y] += 1;
        }
        let top = counts.iter().copied().max().unwrap_or(1).max(1) as f64;
        let class_ratios = counts.iter().map(|&c| c as f64 / top).collect();
        Ok(Self { features, labels, n_classes, class_ratios })
    }
}

fn io_err(e: csv::Error) -> Error {
    invalid(format!("csv: {e}"))
}

/// Class keep-ratios used for the imbalanced experiments.
pub const IMBALANCE_RATIOS: [f64; 10] = [0.738, 0.986, 0.446, 0.254, 0.768, 0.593, 0.918, 0.731, 0.929, 0.284];

/// Distance between any two class means.
pub const CLASS_SEPARATION: f64 = 3.0;

/// Per-class sample counts: `round_half_even(ratio × base)`, at least 1.
pub fn class_counts(base_per_class: usize, ratios: &[f64]) -> Result<Vec<usize>> {
    ratios
        .iter()
        .map(|&r| {
            if !(r > 0.0 && r <= 1.0) {
                return Err(invalid(format!("class ratio {r} outside (0, 1]")));
            }
            let c = (r * base_per_class as f64).round_ties_even() as usize;
            let c = if base_per_class == 0 { 0 } else { c.max(1) };
            if c == 0 {
                return Err(invalid("a class would be empty"));
            }
            Ok(c)
        })
        .collect()
}

/// Gaussian clusters with identity covariance and means `(3/√2)·e_k`, so every
/// pair of class means is 3 apart.
pub fn make_imbalanced_mixture(
    n_features: usize,
    n_classes: usize,
    base_per_class: usize,
    ratios: &[f64],
    seed: u64,
) -> Result<ImbalancedDataset> {
    if n_classes < 2 {
        return Err(invalid("need at least two classes"));
    }
    if ratios.len() != n_classes {
        return Err(invalid(format!("{} ratios for {n_classes} classes", ratios.len())));
    }
    if n_features < n_classes {
        return Err(invalid("simplex means need n_features >= n_classes"));
    }
    let counts = class_counts(base_per_class, ratios)?;
    let total: usize = counts.iter().sum();
    let scale = CLASS_SEPARATION / std::f64::consts::SQRT_2;
    let mut rng = SeededRng::from_seed(seed).derive(Purpose::Data, 0);
    let mut features = Matrix::zeros(total, n_features);
    let mut labels = Vec::with_capacity(total);
    let mut row = 0;
    for (k, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            for j in 0..n_features {
                features[(row, j)] = rng.normal() + if j == k { scale } else { 0.0 };
            }
            labels.push(k);
            row += 1;
        }
    }
    Ok(ImbalancedDataset { features, labels, n_classes, class_ratios: ratios.to_vec() })
}

/// Layout of a flat classifier parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelShape {
    /// `classes × (features + 1)`, one weight row plus bias per class.
    Logistic { features: usize, classes: usize },
    /// `tanh` hidden layer: `W1 (hidden × features)`, `b1`, `W2 (classes × hidden)`, `b2`.
    Mlp { features: usize, hidden: usize, classes: usize },
}

impl ModelShape {
    pub fn param_count(&self) -> usize {
        match *self {
            ModelShape::Logistic { features, classes } => classes * (features + 1),
            ModelShape::Mlp { features, hidden, classes } => hidden * features + hidden + classes * hidden + classes,
        }
    }

    pub fn classes(&self) -> usize {
        match *self {
            ModelShape::Logistic { classes, .. } | ModelShape::Mlp { classes, .. } => classes,
        }
    }

    pub fn features(&self) -> usize {
        match *self {
            ModelShape::Logistic { features, .. } | ModelShape::Mlp { features, .. } => features,
        }
    }

    /// Class scores for one feature row. `params` may be longer than the
    /// model (trailing entries such as a DRO η are ignored).
    pub fn logits(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        match *self {
            ModelShape::Logistic { features, classes } => (0..classes)
                .map(|k| {
                    let w = &params[k * (features + 1)..(k + 1) * (features + 1)];
                    w[..features].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[features]
                })
                .collect(),
            ModelShape::Mlp { .. } => mlp_forward(self, params, x).1,
        }
    }

    pub fn predict(&self, params: &[f64], x: &[f64]) -> usize {
        let z = self.logits(params, x);
        z.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
            .0
    }
}

/// Flat parameters together with their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub values: Vector,
    pub shape: ModelShape,
}

impl ModelParams {
    pub fn new(values: Vector, shape: ModelShape) -> Result<Self> {
        if values.len() != shape.param_count() {
            return Err(invalid(format!(
                "parameter vector has length {}, shape needs {}",
                values.len(),
                shape.param_count()
            )));
        }
        Ok(Self { values, shape })
    }
}

/// Numerically stable softmax probabilities and `log Σ exp`.
fn softmax(z: &[f64]) -> (Vec<f64>, f64) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    (e.iter().map(|v| v / s).collect(), m + s.ln())
}

/// Softmax cross-entropy of a linear classifier, one sample per data row.
#[derive(Debug, Clone)]
pub struct LogisticOracle {
    data: ImbalancedDataset,
    shape: ModelShape,
}

pub fn logistic_oracle(data: ImbalancedDataset) -> Result<LogisticOracle> {
    if data.is_empty() {
        return Err(invalid("empty dataset"));
    }
    if data.labels.iter().any(|&y| y >= data.n_classes) || data.n_classes < 2 {
        return Err(invalid("labels must lie in 0..K with K >= 2"));
    }
    let shape = ModelShape::Logistic { features: data.n_features(), classes: data.n_classes };
    Ok(LogisticOracle { data, shape })
}

impl LogisticOracle {
    pub fn shape(&self) -> ModelShape {
        self.shape
    }

    pub fn data(&self) -> &ImbalancedDataset {
        &self.data
    }

    fn row(&self, sample: SampleId) -> Result<(Vec<f64>, usize)> {
        let i = sample as usize;
        if i >= self.data.len() {
            return Err(invalid(format!("sample {sample} out of range")));
        }
        Ok((self.data.features.row(i).iter().copied().collect(), self.data.labels[i]))
    }
}

impl StochasticOracle for LogisticOracle {
    fn dim(&self) -> usize {
        self.shape.param_count()
    }

    fn sample_count(&self) -> SampleCount {
        SampleCount::Finite(self.data.len())
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities::second_order()
    }

    fn sample_value(&self, x: &Vector, sample: SampleId) -> Result<f64> {
        let (row, y) = self.row(sample)?;
        let z = self.shape.logits(x.as_slice(), &row);
        let (_, lse) = softmax(&z);
        Ok(lse - z[y])
    }

    fn sample_gradient(&self, x: &Vector, sample: SampleId, out: &mut Vector) -> Result<()> {
        let (row, y) = self.row(sample)?;
        let z = self.shape.logits(x.as_slice(), &row);
        let (p, _) = softmax(&z);
        let d = row.len();
        for (k, pk) in p.iter().enumerate() {
            let r = pk - if k == y { 1.0 } else { 0.0 };
            let base = k * (d + 1);
            for j in 0..d {
                out[base + j] = r * row[j];
            }
            out[base + d] = r;
        }
        Ok(())
    }

    fn sample_hessian(&self, x: &Vector, sample: SampleId, out: &mut Matrix) -> Result<()> {
        let (mut row, _) = self.row(sample)?;
        let z = self.shape.logits(x.as_slice(), &row);
        let (p, _) = softmax(&z);
        row.push(1.0);
        let w = row.len();
        let classes = p.len();
        for a in 0..classes {
            for b in 0..classes {
                let c = if a == b { p[a] * (1.0 - p[a]) } else { -p[a] * p[b] };
                for i in 0..w {
                    for j in 0..w {
                        out[(a * w + i, b * w + j)] = c * row[i] * row[j];
                    }
                }
            }
        }
        Ok(())
    }
}

/// One-hidden-layer tanh network with softmax cross-entropy. Gradients only.
#[derive(Debug, Clone)]
pub struct MlpOracle {
    data: ImbalancedDataset,
    shape: ModelShape,
}

pub const MAX_MLP_PARAMS: usize = 10_000;

pub fn mlp_oracle(data: ImbalancedDataset, hidden: usize) -> Result<MlpOracle> {
    if hidden == 0 {
        return Err(invalid("hidden layer must have at least one unit"));
    }
    if data.is_empty() || data.n_classes < 2 {
        return Err(invalid("need a nonempty dataset with at least two classes"));
    }
    let shape = ModelShape::Mlp { features: data.n_features(), hidden, classes: data.n_classes };
    if shape.param_count() > MAX_MLP_PARAMS {
        return Err(invalid(format!("{} parameters exceed the {MAX_MLP_PARAMS} limit", shape.param_count())));
    }
    Ok(MlpOracle { data, shape })
}

/// Hidden activations and output logits.
fn mlp_forward(shape: &ModelShape, params: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let ModelShape::Mlp { features, hidden, classes } = *shape else {
        unreachable!("mlp_forward on a non-MLP shape")
    };
    let (w1, rest) = params.split_at(hidden * features);
    let (b1, rest) = rest.split_at(hidden);
    let (w2, rest) = rest.split_at(classes * hidden);
    let b2 = &rest[..classes];
    let h: Vec<f64> = (0..hidden)
        .map(|i| (w1[i * features..(i + 1) * features].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b1[i]).tanh())
        .collect();
    let z = (0..classes)
        .map(|k| w2[k * hidden..(k + 1) * hidden].iter().zip(&h).map(|(a, b)| a * b).sum::<f64>() + b2[k])
        .collect();
    (h, z)
}

impl MlpOracle {
    pub fn shape(&self) -> ModelShape {
        self.shape
    }

    pub fn data(&self) -> &ImbalancedDataset {
        &self.data
    }

    /// Small random initialization, `N(0, 1/fan_in)` weights and zero biases.
    pub fn init_params(&self, rng: &mut SeededRng) -> Vector {
        let ModelShape::Mlp { features, hidden, classes } = self.shape else { unreachable!() };
        let mut v = Vector::zeros(self.shape.param_count());
        let s1 = 1.0 / (features as f64).sqrt();
        let s2 = 1.0 / (hidden as f64).sqrt();
        for i in 0..hidden * features {
            v[i] = s1 * rng.normal();
        }
        let off = hidden * features + hidden;
        for i in 0..classes * hidden {
            v[off + i] = s2 * rng.normal();
        }
        v
    }

    fn row(&self, sample: SampleId) -> Result<(Vec<f64>, usize)> {
        let i = sample as usize;
        if i >= self.data.len() {
            return Err(invalid(format!("sample {sample} out of range")));
        }
        Ok((self.data.features.row(i).iter().copied().collect(), self.data.labels[i]))
    }
}

impl StochasticOracle for MlpOracle {
    fn dim(&self) -> usize {
        self.shape.param_count()
    }

    fn sample_count(&self) -> SampleCount {
        SampleCount::Finite(self.data.len())
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities::first_order()
    }

    fn sample_value(&self, x: &Vector, sample: SampleId) -> Result<f64> {
        let (row, y) = self.row(sample)?;
        let (_, z) = mlp_forward(&self.shape, x.as_slice(), &row);
        let (_, lse) = softmax(&z);
        Ok(lse - z[y])
    }

    fn sample_gradient(&self, x: &Vector, sample: SampleId, out: &mut Vector) -> Result<()> {
        let ModelShape::Mlp { features, hidden, classes } = self.shape else { unreachable!() };
        let (row, y) = self.row(sample)?;
        let params = x.as_slice();
        let (h, z) = mlp_forward(&self.shape, params, &row);
        let (p, _) = softmax(&z);
        let dz: Vec<f64> = p.iter().enumerate().map(|(k, pk)| pk - if k == y { 1.0 } else { 0.0 }).collect();
        let w2_off = hidden * features + hidden;
        let b2_off = w2_off + classes * hidden;
        let mut dh = vec![0.0; hidden];
        for k in 0..classes {
            for i in 0..hidden {
                out[w2_off + k * hidden + i] = dz[k] * h[i];
                dh[i] += dz[k] * params[w2_off + k * hidden + i];
            }
            out[b2_off + k] = dz[k];
        }
        for i in 0..hidden {
            let da = dh[i] * (1.0 - h[i] * h[i]);
            for j in 0..features {
                out[i * features + j] = da * row[j];
            }
            out[hidden * features + i] = da;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{batch_hessian, Batch};

    #[test]
    fn quartic_origin_is_strict_saddle() {
        let q = make_quartic_saddle(4, 0.0).unwrap();
        let x = Vector::zeros(4);
        assert_eq!(q.full_gradient(&x).unwrap(), Vector::zeros(4));
        let h = q.full_hessian(&x).unwrap();
        assert_eq!(h, Matrix::from_diagonal(&Vector::from_vec(vec![-1.0, 0.0, 0.0, 0.0])));
        let xs = Vector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(q.full_gradient(&xs).unwrap(), Vector::zeros(4));
        assert_eq!(q.full_hessian(&xs).unwrap()[(0, 0)], 2.0);
        assert_eq!(q.full_value(&xs).unwrap(), q.optimal_value());
    }

    #[test]
    fn quartic_needs_two_dims() {
        assert!(make_quartic_saddle(1, 0.0).is_err());
    }

    #[test]
    fn exp_scalar_minimum_and_certificate() {
        let f = make_exp_scalar(3).unwrap();
        let x = Vector::zeros(3);
        assert_eq!(f.full_value(&x).unwrap(), 3.0);
        assert_eq!(f.full_gradient(&x).unwrap(), Vector::zeros(3));
        for &t in &[0.0, 0.3, 1.0, 2.5, 5.0] {
            let x = Vector::from_vec(vec![t, t / 2.0, 0.1]);
            let g = f.full_gradient(&x).unwrap().norm();
            let h = f.full_hessian(&x).unwrap().diagonal().amax();
            assert!(h <= 1.0 + g + 1e-12);
        }
        assert!(f.full_gradient(&Vector::from_vec(vec![701.0, 0.0, 0.0])).is_err());
    }

    #[test]
    fn reference_ratio_counts() {
        let counts = class_counts(100, &IMBALANCE_RATIOS).unwrap();
        assert_eq!(counts, vec![74, 99, 45, 25, 77, 59, 92, 73, 93, 28]);
        assert_eq!(counts.iter().sum::<usize>(), 665);
        assert!(class_counts(0, &[1.0, 1.0]).is_err());
        assert!(class_counts(10, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn mixture_is_deterministic_and_balanced_at_unit_ratios() {
        let a = make_imbalanced_mixture(4, 3, 20, &[1.0, 1.0, 1.0], 5).unwrap();
        let b = make_imbalanced_mixture(4, 3, 20, &[1.0, 1.0, 1.0], 5).unwrap();
        let c = make_imbalanced_mixture(4, 3, 20, &[1.0, 1.0, 1.0], 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.features, c.features);
        assert_eq!(a.class_counts(), vec![20, 20, 20]);
    }

    #[test]
    fn dataset_csv_round_trip() {
        let a = make_imbalanced_mixture(3, 3, 5, &[1.0, 0.6, 0.2], 1).unwrap();
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("label,f0,f1,f2\n"));
        let b = ImbalancedDataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn logistic_zero_params_gives_log_k() {
        let data = make_imbalanced_mixture(4, 4, 5, &[1.0; 4], 2).unwrap();
        let o = logistic_oracle(data).unwrap();
        let x = Vector::zeros(o.dim());
        for s in 0..o.data().len() as u64 {
            assert!((o.sample_value(&x, s).unwrap() - 4f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn mlp_has_no_hessian_and_is_permutation_invariant() {
        let data = make_imbalanced_mixture(3, 3, 6, &[1.0; 3], 3).unwrap();
        let o = mlp_oracle(data, 4).unwrap();
        let x = o.init_params(&mut SeededRng::from_seed(1));
        assert!(matches!(batch_hessian(&o, &x, &Batch::full(3)), Err(Error::Unsupported(_))));
        // swap hidden units 0 and 2
        let (f, h, c) = (3, 4, 3);
        let mut y = x.clone();
        let swap = |v: &mut Vector, a: usize, b: usize| {
            let t = v[a];
            v[a] = v[b];
            v[b] = t;
        };
        for j in 0..f {
            swap(&mut y, j, 2 * f + j);
        }
        swap(&mut y, h * f, h * f + 2);
        let w2 = h * f + h;
        for k in 0..c {
            swap(&mut y, w2 + k * h, w2 + k * h + 2);
        }
        for s in 0..o.data().len() as u64 {
            let a = o.sample_value(&x, s).unwrap();
            let b = o.sample_value(&y, s).unwrap();
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn mlp_rejects_oversized_networks() {
        let data = make_imbalanced_mixture(10, 10, 2, &[1.0; 10], 0).unwrap();
        assert!(mlp_oracle(data, 2000).is_err());
    }
}
