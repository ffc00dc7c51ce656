use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use vistac_bench::ba_problem;
use vistac_core::estimator::{optimize, OptimizeConfig};

fn one_iteration(c: &mut Criterion) {
    let (cfg, state, factors) = ba_problem(30, 3);
    let single = OptimizeConfig { max_iterations: 1, ..cfg.optimizer };
    let mut group = c.benchmark_group("bundle_adjustment");
    // a single step rarely meets the convergence test, so the result is not unwrapped
    group.sample_size(10);
    group.bench_function("iteration_30kf", |b| b.iter(|| optimize(black_box(&state), &factors, &single)));
    group.finish();
}

criterion_group!(benches, one_iteration);
criterion_main!(benches);
