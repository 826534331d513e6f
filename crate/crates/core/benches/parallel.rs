use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use bayes_layers::parallel::{map_indexed, map_indexed_sequential};
use bayes_layers::rng::{rng_from, standard_normal_vec};
use bayes_layers::tensor::kernels::{
    conv2d_forward_parallel, conv2d_forward_sequential, matmul_parallel, matmul_sequential, ConvGeometry,
};

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for n in [32usize, 128, 256] {
        let a = standard_normal_vec(&mut rng_from(&[1, n as u64]), n * n);
        let b = standard_normal_vec(&mut rng_from(&[2, n as u64]), n * n);
        group.bench_with_input(BenchmarkId::new("sequential", n), &n, |bench, &n| {
            bench.iter(|| matmul_sequential(black_box(&a), black_box(&b), n, n, n))
        });
        group.bench_with_input(BenchmarkId::new("parallel", n), &n, |bench, &n| {
            bench.iter(|| matmul_parallel(black_box(&a), black_box(&b), n, n, n))
        });
    }
    group.finish();
}

fn conv2d(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d");
    for batch in [1usize, 8, 32] {
        let g = ConvGeometry {
            batch,
            height: 28,
            width: 28,
            in_channels: 8,
            kernel_h: 3,
            kernel_w: 3,
            out_channels: 16,
            stride: 1,
            pad_top: 1,
            pad_left: 1,
            out_h: 28,
            out_w: 28,
        };
        let x = standard_normal_vec(&mut rng_from(&[3]), batch * 28 * 28 * 8);
        let k = standard_normal_vec(&mut rng_from(&[4]), 3 * 3 * 8 * 16);
        group.bench_with_input(BenchmarkId::new("sequential", batch), &g, |bench, g| {
            bench.iter(|| conv2d_forward_sequential(black_box(&x), black_box(&k), g))
        });
        group.bench_with_input(BenchmarkId::new("parallel", batch), &g, |bench, g| {
            bench.iter(|| conv2d_forward_parallel(black_box(&x), black_box(&k), g))
        });
    }
    group.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let mut group = c.benchmark_group("mc_draws");
    let draw = |i: usize| {
        let z = standard_normal_vec(&mut rng_from(&[5, i as u64]), 64);
        z.iter().map(|v| v * v).sum::<f64>()
    };
    for n in [1_000usize, 100_000] {
        group.bench_with_input(BenchmarkId::new("sequential", n), &n, |bench, &n| {
            bench.iter(|| map_indexed_sequential(n, draw))
        });
        group.bench_with_input(BenchmarkId::new("parallel", n), &n, |bench, &n| {
            bench.iter(|| map_indexed(n, draw))
        });
    }
    group.finish();
}

criterion_group!(benches, matmul, conv2d, monte_carlo);
criterion_main!(benches);
