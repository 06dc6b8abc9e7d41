#![allow(dead_code)]

use bta_core::io::synth::{generate, Planted, SynthSpec};
use bta_core::{Dataset, Model, ModelConfig, TaskKind};
use bta_tensor::Scalar;

/// Small synthetic set: 3 clips of 2 frames, 4 tokens, 16-d features and
/// 12-d word vectors.
pub fn small_spec(task: TaskKind, seed: u64, samples: usize) -> SynthSpec {
    SynthSpec {
        task,
        seed,
        samples,
        clips: 3,
        frames_per_clip: 2,
        tokens: 4,
        feature_dim: 16,
        word_dim: 12,
        labels: 4,
        candidates: 3,
        count_max: 3,
        noise: 0.3,
    }
}

pub fn small_set(task: TaskKind, seed: u64, samples: usize) -> (Dataset<f32>, Planted) {
    generate(&small_spec(task, seed, samples)).unwrap()
}

pub fn model_config<T: Scalar>(data: &Dataset<T>, d_model: usize) -> ModelConfig {
    ModelConfig::new(data.feature_dim, data.word_dim, d_model, data.answer_space.clone())
}

pub fn model_for<T: Scalar>(data: &Dataset<T>, d_model: usize, seed: u64) -> Model<T> {
    Model::new(model_config(data, d_model), seed).unwrap()
}
