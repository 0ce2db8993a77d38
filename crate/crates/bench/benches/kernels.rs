use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use evinterp_bench::{clip, wave};
use evinterp_core::events::voxelize;
use evinterp_core::nn::{abs_max_pool_forward, conv2d_forward, deformable_conv_forward, temporal_attention_forward, PoolAxis};

fn deformable(c: &mut Criterion) {
    let mut group = c.benchmark_group("deformable_conv");
    for size in [32, 64] {
        let image = wave(&[1, 3, size, size], 0.0, 1.0);
        let weights = wave(&[1, 25, size, size], -0.1, 0.1);
        let ax = wave(&[1, 25, size, size], -3.0, 3.0);
        let by = wave(&[1, 25, size, size], -2.0, 2.0);
        group.bench_with_input(BenchmarkId::from_parameter(size), &size, |b, _| {
            b.iter(|| deformable_conv_forward(black_box(&image), &weights, &ax, &by).unwrap())
        });
    }
    group.finish();
}

fn conv(c: &mut Criterion) {
    let x = wave(&[1, 32, 64, 64], -1.0, 1.0);
    let w = wave(&[32, 32, 3, 3], -0.1, 0.1);
    let bias = wave(&[32], -0.1, 0.1);
    c.bench_function("conv2d 32->32 3x3 64x64", |b| {
        b.iter(|| conv2d_forward(black_box(&x), &w, Some(&bias), 1).unwrap())
    });
}

fn attention(c: &mut Criterion) {
    // 4 intervals of 8 tokens, 16 channels, 64x64 pixels
    let q = wave(&[32, 16, 64, 64], -1.0, 1.0);
    let k = wave(&[32, 16, 64, 64], -0.8, 1.1);
    let v = wave(&[32, 16, 64, 64], -1.2, 0.9);
    c.bench_function("temporal attention 8 tokens 16 heads", |b| {
        b.iter(|| temporal_attention_forward(black_box(&q), &k, &v, 8, 16).unwrap())
    });
}

fn pooling(c: &mut Criterion) {
    let x = wave(&[1, 128, 64, 64], -1.0, 1.0);
    c.bench_function("abs max pool 2x2 128x64x64", |b| {
        b.iter(|| abs_max_pool_forward(black_box(&x), PoolAxis::Spatial, 2, 2).unwrap())
    });
}

fn events(c: &mut Criterion) {
    let sample = clip(64, 64, 3);
    let iv = &sample.intervals[1];
    c.bench_function(&format!("voxelize {} events", iv.len()), |b| {
        b.iter(|| voxelize(black_box(iv), 8, 64, 64).unwrap())
    });
}

criterion_group!(benches, deformable, conv, attention, pooling, events);
criterion_main!(benches);
