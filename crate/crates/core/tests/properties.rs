use proptest::prelude::*;
use trgs_core::algorithms::{run_trust_region, run_trust_region_vr, BtPolicy, RunDiagnostics, Schedule};
use trgs_core::dro::{dro_value_grad, minimize_eta, Conjugate, DroDualObjective};
use trgs_core::problems::{logistic_oracle, make_imbalanced_mixture, make_quartic_saddle};
use trgs_core::subproblem::{kkt_report, model_value};
use trgs_core::{solve_clipped, solve_general, solve_normalized, Batch, Matrix, SeededRng, StochasticOracle, Vector};

fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, n)
}

fn instance() -> impl Strategy<Value = (Vector, Matrix, f64)> {
    (1usize..8).prop_flat_map(|n| {
        (vec_strategy(n), vec_strategy(n * n), 0.05f64..3.0).prop_map(move |(g, m, delta)| {
            let m = Matrix::from_vec(n, n, m);
            (Vector::from_vec(g), (&m + m.transpose()) * 0.5, delta)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn general_step_is_feasible_optimal_and_beats_simple_steps((g, b, delta) in instance()) {
        let s = solve_general(&g, &b, delta).unwrap();
        let r = kkt_report(&g, &b, delta, &s);
        prop_assert!(r.kkt_ok() && r.decrease_ok(), "{:?}", r);
        prop_assert!(s.d.norm() <= delta * (1.0 + 1e-10));
        prop_assert!(s.model_decrease <= 1e-12);
        // no worse than the normalized step or any scaled steepest-descent point
        if g.norm() > 0.0 {
            let nd = solve_normalized(&g, delta).unwrap().d;
            prop_assert!(s.model_decrease <= model_value(&g, &b, &nd) + 1e-9);
            for k in 1..=10 {
                let d = &nd * (k as f64 / 10.0);
                prop_assert!(s.model_decrease <= model_value(&g, &b, &d) + 1e-9);
            }
        }
    }

    #[test]
    fn clipped_matches_scaled_identity(g in vec_strategy(5), rho in 0.01f64..10.0, delta in 0.01f64..3.0) {
        let g = Vector::from_vec(g);
        prop_assume!(g.norm() > 1e-6);
        let c = solve_clipped(&g, rho, delta).unwrap();
        let s = solve_general(&g, &(Matrix::identity(5, 5) * rho), delta).unwrap();
        prop_assert!((c.d - s.d).amax() <= 1e-10);
        prop_assert!((c.tr_multiplier - (g.norm() / delta - rho).max(0.0)).abs() <= 1e-9);
    }

    #[test]
    fn smooth_conjugates_are_normalized_and_convex(t in -40.0f64..40.0, alpha in 0.05f64..0.95) {
        for conj in [Conjugate::SmoothedChiSquare, Conjugate::SmoothedCvar { alpha }, Conjugate::Kl] {
            let at0 = conj.eval(0.0);
            prop_assert!(at0.value.abs() < 1e-14 && (at0.first - 1.0).abs() < 1e-14);
            let e = conj.eval(t);
            prop_assert!(e.value.is_finite() && e.first >= 0.0 && e.second.unwrap() >= 0.0);
            // tangent line at 0 lies below a convex function
            prop_assert!(e.value >= t - 1e-12 * (1.0 + t.abs()));
        }
    }

    #[test]
    fn eta_minimizer_is_stationary(x in vec_strategy(12), penalty in 0.2f64..3.0) {
        let data = make_imbalanced_mixture(3, 3, 6, &[1.0, 0.5, 0.5], 1).unwrap();
        let obj = DroDualObjective::new(logistic_oracle(data).unwrap(), Conjugate::SmoothedChiSquare, penalty).unwrap();
        let x = Vector::from_vec(x);
        let batch = Batch::full(obj.base().data().len());
        let sol = minimize_eta(&obj, &x, &batch, 1e-12).unwrap();
        let (v, grad) = dro_value_grad(&obj, &x, sol.eta, &batch).unwrap();
        prop_assert!(grad[x.len()].abs() <= 1e-9);
        for h in [-0.1, 0.1] {
            prop_assert!(dro_value_grad(&obj, &x, sol.eta + h, &batch).unwrap().0 >= v - 1e-12);
        }
    }

    #[test]
    fn seeded_runs_replay_exactly(seed in 0u64..1000, vr in any::<bool>()) {
        let q = make_quartic_saddle(3, 0.3).unwrap();
        let x0 = Vector::from_vec(vec![1.2, -0.4, 0.3]);
        let s = Schedule::manual(0.05, 0.05, 8, 12).unwrap().with_correction(3, 4);
        let diag = RunDiagnostics { full_batch: true, check_invariants: true, ..Default::default() };
        let run = |rng: &SeededRng| if vr {
            run_trust_region_vr(&q, BtPolicy::Zero, &s, &x0, rng, diag)
        } else {
            run_trust_region(&q, BtPolicy::Zero, &s, &x0, rng, diag)
        };
        let a = run(&SeededRng::from_seed(seed)).unwrap();
        let b = run(&SeededRng::from_seed(seed)).unwrap();
        prop_assert_eq!(&a.records, &b.records);
        prop_assert_eq!(a.final_x, b.final_x);
        prop_assert!(!a.status.is_failure());
        prop_assert!(a.records.windows(2).all(|w| w[1].samples > w[0].samples));
    }
}

#[test]
fn spider_with_period_one_is_plain_minibatch() {
    let q = make_quartic_saddle(4, 0.5).unwrap();
    let x0 = Vector::from_vec(vec![1.0, 0.5, -0.5, 0.2]);
    let s = Schedule::manual(0.05, 0.05, 16, 20).unwrap();
    let diag = RunDiagnostics::default();
    let rng = SeededRng::from_seed(3);
    let plain = run_trust_region(&q, BtPolicy::Zero, &s, &x0, &rng, diag).unwrap();
    let vr = run_trust_region_vr(&q, BtPolicy::Zero, &s.clone().with_correction(4, 1), &x0, &rng, diag).unwrap();
    assert_eq!(plain.final_x, vr.final_x);
}

#[test]
fn quartic_saddle_has_known_curvature() {
    let q = make_quartic_saddle(4, 0.0).unwrap();
    let h = q.full_hessian(&Vector::zeros(4)).unwrap();
    assert_eq!(h, Matrix::from_diagonal(&Vector::from_vec(vec![-1.0, 0.0, 0.0, 0.0])));
    assert_eq!(q.full_gradient(&Vector::zeros(4)).unwrap().norm(), 0.0);
    let xs = Vector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
    assert_eq!(q.full_value(&xs).unwrap(), q.optimal_value());
    assert_eq!(q.full_gradient(&xs).unwrap().norm(), 0.0);
}
