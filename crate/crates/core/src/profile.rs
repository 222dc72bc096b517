use crate::error::{invalid, Result};
use crate::oracle::Vector;

/// Constants of the generalized smoothness and variance assumptions.
///
/// First-order constants bound `‖∇²F‖ ≤ L0 + L1‖∇F‖` and the gradient noise
/// `E‖∇f − ∇F‖² ≤ G0² + G1²‖∇F‖²`. The optional second-order block holds the
/// Hessian-Lipschitz growth `(M0, M1)`, Hessian noise `(K0, K1)` and the
/// locality radius δ.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothnessProfile {
    pub l0: f64,
    pub l1: f64,
    pub g0: f64,
    pub g1: f64,
    /// `F(x0) − F*`.
    pub delta_f: f64,
    pub second_order: Option<SecondOrderConstants>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecondOrderConstants {
    pub m0: f64,
    pub m1: f64,
    pub k0: f64,
    pub k1: f64,
    pub delta_radius: f64,
}

impl SmoothnessProfile {
    pub fn first_order(l0: f64, l1: f64, g0: f64, g1: f64, delta_f: f64) -> Result<Self> {
        let p = Self { l0, l1, g0, g1, delta_f, second_order: None };
        p.validate()?;
        Ok(p)
    }

    pub fn with_second_order(mut self, c: SecondOrderConstants) -> Result<Self> {
        self.second_order = Some(c);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let first = [self.l0, self.l1, self.g0, self.g1, self.delta_f];
        if first.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(invalid("smoothness constants must be finite and nonnegative"));
        }
        if self.l0 <= 0.0 {
            return Err(invalid("L0 must be positive"));
        }
        if let Some(c) = &self.second_order {
            let all = [c.m0, c.m1, c.k0, c.k1, c.delta_radius];
            if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(invalid("second-order constants must be finite and nonnegative"));
            }
            if c.m0 <= 0.0 {
                return Err(invalid("M0 must be positive"));
            }
            if c.delta_radius <= 0.0 {
                return Err(invalid("locality radius must be positive"));
            }
        }
        Ok(())
    }
}

/// Current point of a run. `eta` is the auxiliary DRO coordinate when the
/// objective is the joint dual.
#[derive(Debug, Clone, PartialEq)]
pub struct Iterate {
    pub x: Vector,
    pub t: usize,
    pub eta: Option<f64>,
}

impl Iterate {
    pub fn new(x: Vector) -> Result<Self> {
        if !x.iter().all(|v| v.is_finite()) {
            return Err(invalid("iterate has non-finite entries"));
        }
        Ok(Self { x, t: 0, eta: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_nonpositive_l0() {
        assert!(SmoothnessProfile::first_order(0.0, 1.0, 1.0, 0.0, 1.0).is_err());
        assert!(SmoothnessProfile::first_order(1.0, f64::NAN, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn second_order_requires_positive_m0() {
        let p = SmoothnessProfile::first_order(1.0, 1.0, 1.0, 0.0, 1.0).unwrap();
        let c = SecondOrderConstants { m0: 0.0, m1: 1.0, k0: 0.0, k1: 0.0, delta_radius: 1.0 };
        assert!(p.with_second_order(c).is_err());
    }

    #[test]
    fn iterate_must_be_finite() {
        assert!(Iterate::new(Vector::from_vec(vec![1.0, f64::INFINITY])).is_err());
    }
}
