use trgs_bench::{dro_logistic, tr_instance};
use trgs_core::dro::minimize_eta;
use trgs_core::{solve_general, Batch};

#[test]
fn benchmark_inputs_are_well_posed() {
    for n in [2, 10, 50] {
        let (g, b) = tr_instance(n, n as u64);
        assert!(solve_general(&g, &b, 0.5).unwrap().model_decrease < 0.0);
    }
    let obj = dro_logistic(10, 30);
    let x = trgs_core::Vector::from_element(110, 0.01);
    let full = Batch::full(obj.base().data().len());
    assert!(minimize_eta(&obj, &x, &full, 1e-12).unwrap().residual <= 1e-9);
}
