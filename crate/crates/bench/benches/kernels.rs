use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use trgs_bench::{dro_logistic, logistic, tr_instance};
use trgs_core::dro::{dro_hessian, dro_value_grad, minimize_eta, PSI_ETA_TOL};
use trgs_core::estimators::{spider_gradient, SpiderState};
use trgs_core::problems::make_quartic_saddle;
use trgs_core::{
    batch_gradient, draw_batch, solve_clipped, solve_general, solve_normalized, Batch, Purpose, SeededRng,
    StochasticOracle, Vector,
};

fn subproblem(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_general");
    for n in [2usize, 10, 50] {
        let (g, b) = tr_instance(n, n as u64);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| solve_general(black_box(&g), black_box(&b), 0.5).unwrap())
        });
    }
    group.finish();
    let (g, _) = tr_instance(50, 1);
    c.bench_function("solve_normalized/50", |b| b.iter(|| solve_normalized(black_box(&g), 0.5).unwrap()));
    c.bench_function("solve_clipped/50", |b| b.iter(|| solve_clipped(black_box(&g), 2.0, 0.5).unwrap()));
}

fn gradients(c: &mut Criterion) {
    let lo = logistic(10, 100);
    let x = Vector::from_element(lo.dim(), 0.01);
    let mut rng = SeededRng::from_seed(0).derive(Purpose::GradientBatch, 0);
    let batch = draw_batch(&lo, 256, &mut rng).unwrap();
    c.bench_function("logistic batch gradient/256", |b| b.iter(|| batch_gradient(&lo, black_box(&x), &batch).unwrap()));

    let q = make_quartic_saddle(10, 0.1).unwrap();
    let x = Vector::from_element(10, 0.3);
    c.bench_function("spider step/q=5", |b| {
        b.iter(|| {
            let mut state = SpiderState::new(5).unwrap();
            let rng = SeededRng::from_seed(1);
            for t in 0..5u64 {
                spider_gradient(&mut state, &q, &x, 400, 90, &mut rng.derive(Purpose::CorrectionBatch, t)).unwrap();
            }
        })
    });
}

fn dro(c: &mut Criterion) {
    let obj = dro_logistic(10, 30);
    let n = obj.base().dim();
    let x = Vector::from_element(n, 0.01);
    let m = obj.base().data().len();
    let full = Batch::full(m);
    c.bench_function("dro value+grad/full", |b| b.iter(|| dro_value_grad(&obj, black_box(&x), 2.0, &full).unwrap()));
    c.bench_function("dro hessian/full", |b| b.iter(|| dro_hessian(&obj, black_box(&x), 2.0, &full).unwrap()));
    c.bench_function("dro eta solve/full", |b| b.iter(|| minimize_eta(&obj, black_box(&x), &full, PSI_ETA_TOL).unwrap()));
}

criterion_group!(benches, subproblem, gradients, dro);
criterion_main!(benches);
