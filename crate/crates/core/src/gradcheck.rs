//! Whole-model gradient check against central finite differences.

use bta_tensor::{finite_difference_gradient, relative_error, track_relu_margin, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{AnswerSpace, ModelConfig, TaskKind};
use crate::data::QaSample;
use crate::error::{Error, Result};
use crate::io::synth::{generate, SynthSpec};
use crate::model::Model;
use crate::params::Bound;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub clips: usize,
    pub frames_per_clip: usize,
    pub tokens: usize,
    pub feature_dim: usize,
    pub word_dim: usize,
    pub d_model: usize,
    pub candidates: usize,
    pub lambda: f64,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    /// Smallest accepted `|x|` at any relu (including the hinge), so that
    /// no finite-difference step crosses a kink.
    pub min_margin: f64,
    pub max_attempts: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            clips: 2,
            frames_per_clip: 4,
            tokens: 5,
            feature_dim: 8,
            word_dim: 8,
            d_model: 16,
            candidates: 3,
            lambda: 10.0,
            seed: 0,
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            min_margin: 1e-4,
            max_attempts: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupError {
    pub name: String,
    pub elements: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub task: TaskKind,
    pub seed: u64,
    pub relu_margin: f64,
    pub groups: Vec<GroupError>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self, tolerance: f64) -> Vec<&GroupError> {
        self.groups.iter().filter(|g| !(g.max_rel_error <= tolerance)).collect()
    }
}

/// Tiny 64-bit model and sample for `task`, with biases nudged off zero.
pub fn tiny_instance(task: TaskKind, cfg: &GradCheckConfig, seed: u64) -> Result<(Model<f64>, QaSample<f64>)> {
    let spec = SynthSpec {
        task,
        seed,
        samples: 1,
        clips: cfg.clips,
        frames_per_clip: cfg.frames_per_clip,
        tokens: cfg.tokens,
        feature_dim: cfg.feature_dim,
        word_dim: cfg.word_dim,
        labels: 4,
        candidates: cfg.candidates,
        count_max: cfg.clips as u32,
        noise: 0.3,
    };
    let (dataset, _) = generate(&spec)?;
    let answer_space = match task {
        TaskKind::Count => AnswerSpace::Count {
            min: 1,
            max: cfg.clips as u32,
        },
        _ => dataset.answer_space.clone(),
    };
    let mut config = ModelConfig::new(cfg.feature_dim, cfg.word_dim, cfg.d_model, answer_space);
    config.lambda = cfg.lambda;
    let mut model = Model::<f64>::new(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    for p in model.params.iter_mut().filter(|p| p.name.starts_with("b_")) {
        for v in p.value.data_mut() {
            *v = rng.random_range(-0.2..0.2);
        }
    }
    let sample = dataset.samples[0].cast();
    Ok((model, sample))
}

fn loss_value(model: &Model<f64>, sample: &QaSample<f64>) -> Result<f64> {
    let p = Bound::inference(&model.params);
    let out = model.forward(&p, sample)?;
    Ok(model.loss(&out.head, sample.answer)?.item()?)
}

/// Compares backpropagated gradients of every parameter element with
/// central differences. Instances whose relu inputs come within
/// `min_margin` of zero are skipped by reseeding.
pub fn gradient_check_model(task: TaskKind, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    for attempt in 0..cfg.max_attempts {
        let seed = cfg.seed.wrapping_add(attempt);
        let (mut model, sample) = tiny_instance(task, cfg, seed)?;
        let (loss, margin) = track_relu_margin(|| loss_value(&model, &sample));
        loss?;
        if margin < cfg.min_margin {
            continue;
        }
        let (_, grads) = model.loss_and_grads(&sample, 1.0)?;
        let mut groups = Vec::with_capacity(model.params.len());
        let ids: Vec<_> = model.params.iter().map(|(id, _)| id).collect();
        for id in ids {
            let name = model.params.get(id).name.clone();
            let original = model.params.get(id).value.clone();
            let analytic = grads
                .iter()
                .find(|(g, _)| *g == id)
                .map(|(_, g)| g.clone())
                .unwrap_or_else(|| bta_tensor::TensorData::zeros(original.shape().to_vec()));
            let numeric = finite_difference_gradient(
                |x: &Tensor<f64>| -> Result<f64> {
                    model.params.get_mut(id).value = x.to_data();
                    loss_value(&model, &sample)
                },
                &original,
                cfg.step,
            )?;
            model.params.get_mut(id).value = original;
            let max_rel_error = analytic
                .data()
                .iter()
                .zip(numeric.data())
                .map(|(&a, &n)| relative_error(a, n, cfg.floor))
                .fold(0.0, f64::max);
            groups.push(GroupError {
                name,
                elements: analytic.len(),
                max_rel_error,
            });
        }
        return Ok(GradCheckReport {
            task,
            seed,
            relu_margin: margin,
            groups,
        });
    }
    Err(Error::GradCheck(format!(
        "no instance with relu margin >= {} in {} attempts",
        cfg.min_margin, cfg.max_attempts
    )))
}
