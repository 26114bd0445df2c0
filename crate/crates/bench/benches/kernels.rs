use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use transferma_bench::{example1_dataset, random_cv_problem, random_vector};
use transferma_core::experiments::study_fit_options;
use transferma_core::{fit, simplex_project, solve_weights, EdgeFamily};

fn bench_fit(c: &mut Criterion) {
    let mut group = c.benchmark_group("fit");
    group.sample_size(10);
    for (name, family) in [("gaussian", EdgeFamily::GaussianIdentity), ("logistic", EdgeFamily::BernoulliLogistic)] {
        let ds = example1_dataset(100, family);
        let opts = study_fit_options();
        for d in [1, 2, 3] {
            group.bench_with_input(BenchmarkId::new(name, d), &d, |b, &d| {
                b.iter(|| fit(black_box(ds.target()), family, d, &opts).unwrap())
            });
        }
    }
    group.finish();
}

fn bench_solve_weights(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_weights");
    for cols in [4, 12, 24] {
        let problem = random_cv_problem(5000, cols, 3);
        group.bench_with_input(BenchmarkId::from_parameter(cols), &problem, |b, p| {
            b.iter(|| solve_weights(black_box(p), 1e-9).unwrap())
        });
    }
    group.finish();
}

fn bench_simplex_project(c: &mut Criterion) {
    let mut group = c.benchmark_group("simplex_project");
    for len in [4, 64, 1024] {
        let v = random_vector(len, 5);
        group.bench_with_input(BenchmarkId::from_parameter(len), &v, |b, v| b.iter(|| simplex_project(black_box(v))));
    }
    group.finish();
}

criterion_group!(benches, bench_fit, bench_solve_weights, bench_simplex_project);
criterion_main!(benches);
