//! Matched-sample comparison of the SPIDER estimator against a plain
//! minibatch estimator.
//!
//! Over one restart period the VR run draws `S1 + (q − 1)·S3` samples; the
//! plain run uses the ceiling of the per-step average, so cumulative counts
//! agree at every period boundary (exactly when `q` divides the total).

use trgs_core::algorithms::{run_trust_region, run_trust_region_vr, BtPolicy, RunDiagnostics, Schedule};
use trgs_core::{Error, Result, SeededRng, StochasticOracle, Vector};

fn invalid_argument(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchedComparison {
    pub seeds: usize,
    pub plain_batch: usize,
    /// Mean over seeds of `‖g_t − ∇F(x_t)‖²`, one entry per step.
    pub vr_error: Vec<f64>,
    pub plain_error: Vec<f64>,
    /// Mean cumulative samples after each step.
    pub vr_samples: Vec<f64>,
    pub plain_samples: Vec<f64>,
}

impl MatchedComparison {
    /// Share of steps where the VR estimate has the smaller mean error.
    pub fn vr_lower_fraction(&self) -> f64 {
        let wins = self.vr_error.iter().zip(&self.plain_error).filter(|(v, p)| v < p).count();
        wins as f64 / self.vr_error.len().max(1) as f64
    }
}

/// Plain batch size matching the VR per-step average.
pub fn matched_batch(schedule: &Schedule) -> Result<usize> {
    let s3 = schedule.s3.ok_or_else(|| invalid_argument("matched comparison needs an S3 batch"))?;
    let per_period = schedule.s1 + (schedule.q - 1) * s3;
    Ok(per_period.div_ceil(schedule.q))
}

/// Runs both estimators from `x0` for each seed with the same policy and
/// radius, recording the estimator error at every step.
pub fn matched_sample_comparison<O: StochasticOracle + ?Sized>(
    oracle: &O,
    policy: BtPolicy,
    schedule: &Schedule,
    x0: &Vector,
    seeds: &[u64],
) -> Result<MatchedComparison> {
    if seeds.is_empty() || schedule.iterations == 0 {
        return Err(invalid_argument("need at least one seed and one step"));
    }
    let plain_batch = matched_batch(schedule)?;
    let mut plain_schedule = schedule.clone();
    plain_schedule.s1 = plain_batch;
    plain_schedule.s3 = None;
    let diag = RunDiagnostics { full_batch: false, estimator_error: true, ..Default::default() };
    let t = schedule.iterations;
    let mut out = MatchedComparison {
        seeds: seeds.len(),
        plain_batch,
        vr_error: vec![0.0; t],
        plain_error: vec![0.0; t],
        vr_samples: vec![0.0; t],
        plain_samples: vec![0.0; t],
    };
    let w = 1.0 / seeds.len() as f64;
    for &seed in seeds {
        let rng = SeededRng::from_seed(seed);
        let vr = run_trust_region_vr(oracle, policy, schedule, x0, &rng, diag)?;
        let plain = run_trust_region(oracle, policy, &plain_schedule, x0, &rng, diag)?;
        for (trace, err, samples) in [(&vr, &mut out.vr_error, &mut out.vr_samples), (&plain, &mut out.plain_error, &mut out.plain_samples)] {
            if trace.records.len() != t + 1 {
                return Err(invalid_argument(format!("seed {seed}: run ended early ({:?})", trace.status)));
            }
            for (k, r) in trace.records[1..].iter().enumerate() {
                err[k] += w * r.est_error.unwrap_or(f64::NAN);
                samples[k] += w * r.grad_samples as f64;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use trgs_core::problems::make_quartic_saddle;

    #[test]
    fn batch_matches_period_average() {
        let s = Schedule::manual(0.05, 0.05, 400, 10).unwrap().with_correction(90, 5);
        assert_eq!(matched_batch(&s).unwrap(), 152);
    }

    #[test]
    fn samples_agree_at_period_ends() {
        let q = make_quartic_saddle(3, 0.3).unwrap();
        let s = Schedule::manual(0.05, 0.05, 40, 10).unwrap().with_correction(10, 5);
        let x0 = Vector::from_vec(vec![1.0, 0.5, -0.5]);
        let c = matched_sample_comparison(&q, BtPolicy::Zero, &s, &x0, &[0, 1]).unwrap();
        assert_eq!(c.plain_batch, 16);
        assert_eq!(c.vr_samples[4], c.plain_samples[4]);
        assert_eq!(c.vr_samples[9], c.plain_samples[9]);
        assert!(c.vr_error.iter().all(|e| e.is_finite()));
    }
}
