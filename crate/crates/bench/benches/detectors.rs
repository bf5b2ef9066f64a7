use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use shiftwatch_bench::{pranges, step_effect};
use shiftwatch_core::{fit_forest, predict_cate, scan, ForestParams, ScanConfig, Scenario};

fn bench_scan(c: &mut Criterion) {
    let mut group = c.benchmark_group("scan");
    for n in [500, 2000] {
        let matrix = pranges(n, 4, 1);
        let config = ScanConfig::default();
        group.bench_with_input(BenchmarkId::from_parameter(n), &matrix, |b, m| b.iter(|| scan(m, &config).unwrap()));
    }
    group.finish();
}

fn bench_forest(c: &mut Criterion) {
    let data = step_effect(2000, 3, 2);
    let params = ForestParams { trees: 100, seed: 2, ..ForestParams::default() };
    c.bench_function("forest/fit_2000x3_100_trees", |b| b.iter(|| fit_forest(&data, &params).unwrap()));
    let model = fit_forest(&data, &params).unwrap();
    c.bench_function("forest/predict", |b| b.iter(|| predict_cate(&model, &[0.7, 0.2, 0.5], 0.05).unwrap()));
}

fn bench_simulate(c: &mut Criterion) {
    let scenario = Scenario::booking_surge();
    c.bench_function("simulate/booking_surge_test", |b| b.iter(|| scenario.generate_test(3).unwrap()));
}

criterion_group!(benches, bench_scan, bench_forest, bench_simulate);
criterion_main!(benches);
