//! Fixtures shared by the benchmarks.

use evinterp_core::datagen::{make_clip, random_scene, SceneOptions, DEFAULT_SUBSTEPS};
use evinterp_core::model::{ClipSample, ModelConfig};
use evinterp_core::training::PreparedSample;
use evinterp_core::Tensor;

/// Deterministic values in `[lo, hi)`.
pub fn wave(shape: &[usize], lo: f32, hi: f32) -> Tensor<f32> {
    Tensor::from_fn(shape, |i| lo + (hi - lo) * (0.5 + 0.5 * ((i as f32) * 0.618).sin()))
}

/// A synthetic clip with moving sprites.
pub fn clip(height: usize, width: usize, seed: u64) -> ClipSample {
    let opts = SceneOptions {
        height,
        width,
        ..SceneOptions::default()
    };
    let spec = random_scene(&opts, seed).expect("scene");
    make_clip(&spec, spec.keyframe_times(), DEFAULT_SUBSTEPS).expect("clip")
}

pub fn prepared(n: usize, height: usize, width: usize, config: &ModelConfig) -> Vec<PreparedSample> {
    (0..n)
        .map(|i| PreparedSample::new(format!("clip{i}"), &clip(height, width, i as u64), config).expect("sample"))
        .collect()
}
