use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use evinterp_bench::prepared;
use evinterp_core::model::{Model, ModelConfig};
use evinterp_core::training::{Batch, TrainConfig, Trainer};

fn forward(c: &mut Criterion) {
    let config = ModelConfig::default();
    let model = Model::<f32>::new(&config).unwrap();
    let samples = prepared(1, 64, 64, &config);
    let batch = Batch::assemble(&[&samples[0]]).unwrap();
    let mut group = c.benchmark_group("model");
    group.sample_size(10);
    group.bench_function("predict 64x64", |b| {
        b.iter(|| model.predict(black_box(&batch.voxels), &batch.clip).unwrap())
    });
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let config = ModelConfig::default();
    let train = TrainConfig {
        batch_size: 4,
        // criterion decides how many steps it takes
        epochs: 1_000_000,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(&config, &train, prepared(4, 64, 64, &config)).unwrap();
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("step batch 4 64x64", |b| b.iter(|| trainer.step().unwrap()));
    group.finish();
}

criterion_group!(benches, forward, train_step);
criterion_main!(benches);
