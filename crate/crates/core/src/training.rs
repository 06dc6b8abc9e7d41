//! Training loop, learning-rate schedule and evaluation.

use std::time::Instant;

use bta_tensor::Scalar;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{TaskKind, TrainConfig};
use crate::data::{Answer, Dataset};
use crate::error::Result;
use crate::io::{Checkpoint, DataError};
use crate::model::{Model, Prediction};
use crate::optim::{AdamConfig, AdamState};
use crate::parallel::parallel_map;
use crate::params::ParamStore;

/// `lr · decay^⌊epoch / decay_every⌋`.
pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> f64 {
    let halvings = (epoch / config.decay_every.max(1)) as i32;
    config.learning_rate * config.lr_decay.powi(halvings)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy(f64),
    Mse(f64),
}

impl Metric {
    pub fn value(self) -> f64 {
        match self {
            Metric::Accuracy(v) | Metric::Mse(v) => v,
        }
    }

    /// Whether `self` beats `other` (higher accuracy, lower error).
    pub fn better_than(self, other: Metric) -> bool {
        match (self, other) {
            (Metric::Accuracy(a), Metric::Accuracy(b)) => a > b,
            (Metric::Mse(a), Metric::Mse(b)) => a < b,
            _ => false,
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Metric::Accuracy(v) => write!(f, "accuracy {v:.4}"),
            Metric::Mse(v) => write!(f, "mse {v:.4}"),
        }
    }
}

/// Accuracy of labels or choices, or mean squared error of rounded counts.
pub fn score_predictions(task: TaskKind, predictions: &[(Prediction, Answer)]) -> Metric {
    let n = predictions.len().max(1) as f64;
    match task {
        TaskKind::Count => Metric::Mse(
            predictions
                .iter()
                .map(|(p, a)| match (p, a) {
                    (Prediction::Count { answer, .. }, Answer::Count(c)) => (f64::from(*answer) - f64::from(*c)).powi(2),
                    _ => f64::INFINITY,
                })
                .sum::<f64>()
                / n,
        ),
        _ => Metric::Accuracy(predictions.iter().filter(|(p, a)| p.is_correct(*a)).count() as f64 / n),
    }
}

/// Predicts every sample in parallel; parameters are only read.
pub fn predict_all<T: Scalar>(model: &Model<T>, dataset: &Dataset<T>) -> Result<Vec<Prediction>> {
    parallel_map(&dataset.samples, |s| model.predict(s)).into_iter().collect()
}

pub fn evaluate<T: Scalar>(model: &Model<T>, dataset: &Dataset<T>) -> Result<Metric> {
    if dataset.is_empty() {
        return Err(DataError::Empty.into());
    }
    let preds = predict_all(model, dataset)?;
    let pairs: Vec<_> = preds.into_iter().zip(dataset.samples.iter().map(|s| s.answer)).collect();
    Ok(score_predictions(dataset.task(), &pairs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub mean_loss: f64,
    pub metric: Metric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_metric: Metric,
    pub wall_time_secs: f64,
    pub param_checksum: String,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_loss).collect()
    }
}

/// Model plus optimizer state and the shuffling stream.
pub struct Trainer<T: Scalar> {
    pub model: Model<T>,
    pub optimizer: AdamState<T>,
    pub config: TrainConfig,
    pub adam: AdamConfig,
    pub epoch: usize,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: Model<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = AdamState::new(&model.params);
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f5a_4d1e);
        Ok(Self {
            model,
            optimizer,
            config,
            adam: AdamConfig::default(),
            epoch: 0,
            rng,
        })
    }

    /// One pass over `dataset` in shuffled mini-batches. Each sample runs
    /// its own forward and backward pass; gradients are summed in sample
    /// order, so the result does not depend on the thread count.
    pub fn train_epoch(&mut self, dataset: &Dataset<T>) -> Result<f64> {
        if dataset.is_empty() {
            return Err(DataError::Empty.into());
        }
        let lr = lr_schedule(self.epoch, &self.config);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        for batch in order.chunks(self.config.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let model = &self.model;
            let results = parallel_map(batch, |&i| model.loss_and_grads(&dataset.samples[i], scale));
            self.model.params.zero_grads();
            for r in results {
                let (loss, grads) = r?;
                total += loss;
                self.model.params.accumulate(grads);
            }
            self.optimizer.step(&mut self.model.params, lr, self.adam)?;
        }
        self.epoch += 1;
        Ok(total / dataset.len() as f64)
    }

    /// Trains for the configured epochs, keeping the parameters of the epoch
    /// with the best metric on `validation` (the training set when absent).
    pub fn fit(&mut self, train: &Dataset<T>, validation: Option<&Dataset<T>>) -> Result<TrainReport> {
        self.fit_with(train, validation, |_| {})
    }

    /// [`Trainer::fit`] with a callback after every epoch.
    pub fn fit_with(
        &mut self,
        train: &Dataset<T>,
        validation: Option<&Dataset<T>>,
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<TrainReport> {
        let start = Instant::now();
        let val = validation.unwrap_or(train);
        let mut epochs = Vec::with_capacity(self.config.epochs);
        let mut best: Option<(usize, Metric, ParamStore<T>, AdamState<T>)> = None;
        for _ in 0..self.config.epochs {
            let learning_rate = lr_schedule(self.epoch, &self.config);
            let mean_loss = self.train_epoch(train)?;
            let metric = evaluate(&self.model, val)?;
            let record = EpochRecord {
                epoch: self.epoch - 1,
                learning_rate,
                mean_loss,
                metric,
            };
            on_epoch(&record);
            if best.as_ref().is_none_or(|b| metric.better_than(b.1)) {
                best = Some((record.epoch, metric, self.model.params.clone(), self.optimizer.clone()));
            }
            epochs.push(record);
        }
        let (best_epoch, best_metric, params, optimizer) = best.expect("at least one epoch ran");
        self.model.params = params;
        self.optimizer = optimizer;
        Ok(TrainReport {
            epochs,
            best_epoch,
            best_metric,
            wall_time_secs: start.elapsed().as_secs_f64(),
            param_checksum: self.model.params.checksum(),
        })
    }

    /// Snapshot of the current parameters and optimizer state.
    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint::capture(&self.model, &self.config, self.epoch, &self.optimizer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_halves_every_five_epochs() {
        let c = TrainConfig::default();
        assert_eq!(lr_schedule(0, &c), 1e-4);
        assert_eq!(lr_schedule(4, &c), 1e-4);
        assert_eq!(lr_schedule(5, &c), 5e-5);
        assert!((lr_schedule(24, &c) - 6.25e-6).abs() < 1e-20);
    }
}
