use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use suplearn::experiment::{fit_samples, Method};
use suplearn::{fit_support_qp, sample_constrained_gp_paths, reach_cloud, Dubins, QpSolveOptions, RegressionMode};
use suplearn_bench::{disk_samples, dubins_config, dubins_samples};

fn qp_fit(c: &mut Criterion) {
    let mut group = c.benchmark_group("qp_fit_disk");
    group.sample_size(10);
    for n in [25, 50, 100] {
        let samples = disk_samples(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &samples, |b, s| {
            b.iter(|| fit_support_qp(black_box(s), RegressionMode::Sublinear, &QpSolveOptions::default()).unwrap())
        });
    }
    group.finish();
}

fn isnn_train(c: &mut Criterion) {
    let cfg = dubins_config(200, 200);
    let samples = dubins_samples(200, 200);
    let mut group = c.benchmark_group("isnn_train_dubins");
    group.sample_size(10);
    for epochs in [5, 40] {
        let mut cfg = cfg.clone();
        cfg.isnn.adam.epochs = epochs;
        group.bench_with_input(BenchmarkId::from_parameter(epochs), &cfg, |b, cfg| {
            b.iter(|| fit_samples(cfg, black_box(&samples), Method::Isnn, 0).unwrap())
        });
    }
    group.finish();
}

fn sampling(c: &mut Criterion) {
    let cfg = dubins_config(100, 200);
    let gp = cfg.gp().unwrap();
    let bounds = cfg.agent.bounds().unwrap();
    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10).measurement_time(Duration::from_secs(10));
    group.bench_function("gibbs_100_paths", |b| {
        b.iter(|| sample_constrained_gp_paths(&gp, &bounds, 100, black_box(1), cfg.gibbs).unwrap())
    });
    let ensemble = sample_constrained_gp_paths(&gp, &bounds, 100, 1, cfg.gibbs).unwrap();
    group.bench_function("rk4_100_paths", |b| {
        b.iter(|| reach_cloud(&Dubins::default(), &cfg.agent.x0, black_box(&ensemble), cfg.dt_sub).unwrap())
    });
    group.finish();
}

criterion_group!(benches, qp_fit, isnn_train, sampling);
criterion_main!(benches);
