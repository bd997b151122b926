use brw_bench::{line_sources, simple};
use brw_core::oracles::{evolve_m1, simulate_brw, SimMethod, TruncatedOperator};
use brw_core::{BranchingLaw, LatticePoint, SimulationConfig};
use criterion::{criterion_group, criterion_main, Criterion};

fn oracles(c: &mut Criterion) {
    let mut group = c.benchmark_group("oracles");
    group.sample_size(10);
    let k = simple(3);
    let src = line_sources(3, 1, 1.3);
    group.bench_function("truncated_top_eig_l8", |b| {
        b.iter(|| TruncatedOperator::new(&k, &src, 1.3, 8).unwrap().top_eigs(1).unwrap())
    });
    let times: Vec<f64> = (0..=10).map(|t| t as f64).collect();
    group.bench_function("evolve_m1_l8", |b| {
        b.iter(|| evolve_m1(&k, &src, 1.3, &LatticePoint::origin(3), &times, 8).unwrap())
    });
    group.finish();
}

fn simulation(c: &mut Criterion) {
    let mut group = c.benchmark_group("simulation");
    group.sample_size(10);
    let k = simple(3);
    let src = line_sources(3, 1, 1.3);
    let law = BranchingLaw::binary(1.3).unwrap();
    let base = SimulationConfig { t_max: 8.0, trials: 200, seed: 1, ..Default::default() };
    group.bench_function("first_passage", |b| b.iter(|| simulate_brw(&k, &src, &law, &base).unwrap()));
    let stepwise = SimulationConfig { method: SimMethod::Stepwise, ..base };
    group.bench_function("stepwise", |b| b.iter(|| simulate_brw(&k, &src, &law, &stepwise).unwrap()));
    group.finish();
}

criterion_group!(benches, oracles, simulation);
criterion_main!(benches);
