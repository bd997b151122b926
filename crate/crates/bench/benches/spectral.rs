use brw_bench::{heavy_1d, line_sources, simple, solver};
use brw_core::criticality::SpectralProblem;
use brw_core::gamma::{build_gamma, eigs};
use brw_core::LatticePoint;
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use std::sync::Arc;

fn green(c: &mut Criterion) {
    let mut group = c.benchmark_group("green");
    for d in [1usize, 2, 3] {
        let s = solver(&simple(d));
        let x = LatticePoint::unit(d, 0);
        group.bench_with_input(BenchmarkId::new("simple", d), &d, |b, _| {
            b.iter(|| s.green(black_box(0.25), &x).unwrap())
        });
    }
    let s = solver(&simple(3));
    group.bench_function("simple_zero_3", |b| b.iter(|| s.green_zero(&LatticePoint::origin(3)).unwrap()));
    let s = solver(&heavy_1d(0.5));
    group.bench_function("heavy_1d", |b| b.iter(|| s.green(black_box(0.25), &LatticePoint::new(vec![3])).unwrap()));
    group.finish();
}

fn gamma(c: &mut Criterion) {
    let mut group = c.benchmark_group("gamma");
    let s = solver(&simple(3));
    for n in [2usize, 5, 10] {
        let src = line_sources(3, n, 1.0);
        group.bench_with_input(BenchmarkId::new("build_and_eigs", n), &n, |b, _| {
            b.iter(|| eigs(&build_gamma(&s, &src, black_box(0.3)).unwrap()).unwrap())
        });
    }
    group.finish();
}

fn spectrum(c: &mut Criterion) {
    let mut group = c.benchmark_group("spectrum");
    group.sample_size(10);
    let s = Arc::new(solver(&simple(3)));
    for n in [1usize, 3] {
        group.bench_with_input(BenchmarkId::new("simple3", n), &n, |b, &n| {
            b.iter(|| {
                // a fresh problem each time so the eigenvalue cache starts empty
                let p = SpectralProblem::with_solver(s.clone(), line_sources(3, n, 1.2)).unwrap();
                p.spectrum(black_box(1.2)).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, green, gamma, spectrum);
criterion_main!(benches);
