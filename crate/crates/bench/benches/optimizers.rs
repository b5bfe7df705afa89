use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sdprop_bench::{gradient_stream, spd_matrix};
use sdprop_core::covstat::DEFAULT_EIGEN_FLOOR;
use sdprop_core::{build_mlp, inv_sqrt, Activation, DiagCovState, FullCovState, InitSpec, Optimizer, OptimizerConfig, Tensor};

fn covstat_updates(c: &mut Criterion) {
    let mut group = c.benchmark_group("covstat");
    for dim in [10, 1_000, 100_000] {
        let stream = gradient_stream(dim, 8);
        group.bench_with_input(BenchmarkId::new("diag_observe", dim), &stream, |b, s| {
            let mut state = DiagCovState::new(dim, 0.99).unwrap();
            let mut i = 0;
            b.iter(|| {
                state.observe(black_box(&s[i % s.len()])).unwrap();
                i += 1;
            });
        });
    }
    for dim in [4, 16, 50] {
        let stream = gradient_stream(dim, 8);
        group.bench_with_input(BenchmarkId::new("full_observe", dim), &stream, |b, s| {
            let mut state = FullCovState::new(dim, 0.99).unwrap();
            let mut i = 0;
            b.iter(|| {
                state.observe(black_box(&s[i % s.len()])).unwrap();
                i += 1;
            });
        });
        let m = spd_matrix(dim);
        group.bench_with_input(BenchmarkId::new("inv_sqrt", dim), &m, |b, m| {
            b.iter(|| inv_sqrt(black_box(m), DEFAULT_EIGEN_FLOOR).unwrap());
        });
    }
    group.finish();
}

fn optimizer_steps(c: &mut Criterion) {
    let dim = 50_000;
    let stream = gradient_stream(dim, 4);
    let mut group = c.benchmark_group("step");
    for cfg in [
        OptimizerConfig::sgd(0.01),
        OptimizerConfig::rmsprop(0.001, 0.99),
        OptimizerConfig::adam(0.001),
        OptimizerConfig::sdprop(0.001, 0.99),
    ] {
        group.bench_function(cfg.kind.name(), |b| {
            let mut opt = Optimizer::new(&cfg, dim).unwrap();
            let mut theta = vec![0.0; dim];
            let mut i = 0;
            b.iter(|| {
                opt.step(&mut theta, black_box(&stream[i % stream.len()])).unwrap();
                i += 1;
            });
        });
    }
    let full_dim = 50;
    let full_stream = gradient_stream(full_dim, 4);
    group.bench_function("sdprop-full/50", |b| {
        let mut opt = Optimizer::new(&OptimizerConfig::sdprop_full(0.001, 0.99), full_dim).unwrap();
        let mut theta = vec![0.0; full_dim];
        let mut i = 0;
        b.iter(|| {
            opt.step(&mut theta, black_box(&full_stream[i % full_stream.len()])).unwrap();
            i += 1;
        });
    });
    group.finish();
}

fn mlp_forward_backward(c: &mut Criterion) {
    let mut sizes = vec![784];
    sizes.extend([50; 20]);
    sizes.push(10);
    let mut mlp = build_mlp(&sizes, Activation::Relu, InitSpec { mean: 0.0, stddev: 0.01, seed: 0 }).unwrap();
    let theta = mlp.graph.params_flat();
    let batch = 128;
    let x: Vec<f64> = gradient_stream(784, batch).into_iter().flatten().map(f64::abs).collect();
    let y: Vec<f64> = (0..batch).map(|i| (i % 10) as f64).collect();
    c.bench_function("mlp_20x50_batch128_loss_and_grad", |b| {
        b.iter(|| {
            let features = Tensor::matrix(batch, 784, x.clone()).unwrap();
            mlp.loss_and_grad(black_box(&theta), features, Tensor::vector(y.clone())).unwrap()
        });
    });
}

criterion_group!(benches, covstat_updates, optimizer_steps, mlp_forward_backward);
criterion_main!(benches);
