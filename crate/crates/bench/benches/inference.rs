use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use maxscore::inference::{invert_test, DrawMode};
use maxscore::montecarlo::{run_experiment, Design, DgpSpec, McConfig};
use maxscore::teststat::{critical_value, MomentSets, RademacherDraws};
use maxscore::{build_instruments_2d, enumerate_cells, TestConfig, ThetaGrid};
use maxscore_bench::{generic_covariates, logistic_sample};

fn critical_values(c: &mut Criterion) {
    let mut group = c.benchmark_group("critical_value");
    for n in [100, 250] {
        let sample = logistic_sample(n, 1);
        let inst = build_instruments_2d(sample.x()).unwrap();
        let sets = MomentSets::new(sample.x(), &[1.0, 1.0], &inst).unwrap();
        let draws = RademacherDraws::generate(n, 500, 2);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| critical_value(black_box(&sets), &draws, 0.1, 1e-16).unwrap())
        });
    }
    group.finish();
}

fn inversion(c: &mut Criterion) {
    let sample = logistic_sample(100, 3);
    let grid = ThetaGrid::around(1, 1.0).unwrap();
    let config = TestConfig::default();
    c.bench_function("invert_test/n100_grid601", |b| {
        b.iter(|| invert_test(black_box(&sample), &grid, &config, DrawMode::Shared).unwrap())
    });
}

fn cells(c: &mut Criterion) {
    let mut group = c.benchmark_group("enumerate_cells");
    group.sample_size(10);
    for (n, k) in [(20, 2), (12, 3), (10, 4)] {
        let x = generic_covariates(n, k, 4);
        group.bench_with_input(BenchmarkId::new(format!("k{k}"), n), &x, |b, x| {
            b.iter(|| enumerate_cells(black_box(x)).unwrap())
        });
    }
    group.finish();
}

fn experiment(c: &mut Criterion) {
    let dgp = DgpSpec::new(Design::Logistic, 1.0, 100, 5).unwrap();
    let grid = ThetaGrid::around(1, 1.0).unwrap();
    let config = McConfig::default();
    let mut group = c.benchmark_group("run_experiment");
    group.sample_size(10);
    group.bench_function("design1_n100_reps100", |b| {
        b.iter(|| run_experiment(&dgp, &grid, 100, &config).unwrap())
    });
    group.finish();
}

criterion_group!(benches, critical_values, inversion, cells, experiment);
criterion_main!(benches);
