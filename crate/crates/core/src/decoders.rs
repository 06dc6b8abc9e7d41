//! Pooling, answer decoders and losses.

use bta_tensor::{Scalar, Tensor, TensorError};
use rand::Rng;

use crate::config::{AnswerSpace, ModelConfig};
use crate::error::{Error, Result};
use crate::layers::{Activation, Linear};
use crate::params::{Bound, ParamStore};

/// Floor applied inside the cross-entropy logarithm.
pub const LOG_EPS: f64 = 1e-12;

/// Pooled visual streams and their concatenation `o`.
pub struct Fused<T: Scalar> {
    pub v_bar: Option<Tensor<T>>,
    pub m_bar: Option<Tensor<T>>,
    pub o: Tensor<T>,
}

/// Mean over nodes of each present stream, concatenated appearance first.
pub fn fuse_pool<T: Scalar>(v_f: Option<&Tensor<T>>, m_f: Option<&Tensor<T>>) -> Result<Fused<T>> {
    let v_bar = v_f.map(|v| v.mean_axis(0)).transpose()?;
    let m_bar = m_f.map(|m| m.mean_axis(0)).transpose()?;
    let parts: Vec<_> = v_bar.iter().chain(m_bar.iter()).cloned().collect();
    let o = Tensor::concat_last_axis(&parts)?;
    Ok(Fused { v_bar, m_bar, o })
}

/// Index of the largest score; ties go to the lowest index.
pub fn select_answer(scores: &[f64]) -> Result<usize> {
    let (first, rest) = scores.split_first().ok_or(Error::EmptyScores)?;
    let mut best = (0, *first);
    for (i, &s) in rest.iter().enumerate() {
        if s > best.1 {
            best = (i + 1, s);
        }
    }
    Ok(best.0)
}

/// Rounds half up and clamps into `[min, max]`.
pub fn round_count(raw: f64, min: u32, max: u32) -> u32 {
    let r = (raw + 0.5).floor();
    if r.is_nan() || r < f64::from(min) {
        min
    } else if r > f64::from(max) {
        max
    } else {
        r as u32
    }
}

/// `-ln max(p[label], ε)`.
pub fn cross_entropy_loss<T: Scalar>(p: &Tensor<T>, label: usize) -> Result<Tensor<T>> {
    if label >= p.numel() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: p.numel(),
        });
    }
    Ok(p.neg_log_at(label, LOG_EPS)?)
}

/// `(raw - target)²` for a one-element `raw`.
pub fn mse_loss<T: Scalar>(raw: &Tensor<T>, target: f64) -> Result<Tensor<T>> {
    let d = raw.reshape(Vec::new())?.add_scalar(-target);
    Ok(d.mul(&d)?)
}

/// `Σ_{n ≠ correct} max(0, 1 + s_n - s_correct)`.
pub fn hinge_loss<T: Scalar>(scores: &Tensor<T>, correct: usize) -> Result<Tensor<T>> {
    let c = scores.numel();
    if correct >= c {
        return Err(Error::LabelOutOfRange {
            label: correct,
            classes: c,
        });
    }
    let positive = scores.index(correct)?;
    let mut total = Tensor::scalar(T::zero());
    for n in (0..c).filter(|&n| n != correct) {
        let margin = scores.index(n)?.sub(&positive)?.add_scalar(1.0).relu();
        total = total.add(&margin)?;
    }
    Ok(total)
}

/// Shared trunk of the open-ended and count heads:
/// `y' = relu(W_y relu(W_2 [o, W_1 ū + b] + b) + b)`.
#[derive(Debug, Clone)]
pub struct Trunk {
    pub w1: Linear,
    pub w2: Linear,
    pub wy: Linear,
}

impl Trunk {
    fn new<T: Scalar>(store: &mut ParamStore<T>, o_dim: usize, d: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            w1: Linear::new(store, "1", d, d, Activation::Identity, rng)?,
            w2: Linear::new(store, "2", o_dim + d, d, Activation::Relu, rng)?,
            wy: Linear::new(store, "y", d, d / 2, Activation::Relu, rng)?,
        })
    }

    fn forward<T: Scalar>(&self, p: &Bound<'_, T>, o: &Tensor<T>, u_bar: &Tensor<T>) -> Result<Tensor<T>> {
        let q = self.w1.forward(p, u_bar)?;
        let y = self.w2.forward(p, &Tensor::concat_last_axis(&[o.clone(), q])?)?;
        self.wy.forward(p, &y)
    }
}

/// Task-specific decoder.
#[derive(Debug, Clone)]
pub enum Head {
    OpenEnded { trunk: Trunk, classifier: Linear },
    Count { trunk: Trunk, regressor: Linear, min: u32, max: u32 },
    MultiChoice { ww: Linear, wa: Linear, wy: Linear, scorer: Linear },
}

impl Head {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, config: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let d = config.d_model;
        let o_dim = config.fused_dim() * config.ablation.streams();
        Ok(match &config.answer_space {
            AnswerSpace::OpenEnded { labels } => Head::OpenEnded {
                trunk: Trunk::new(store, o_dim, d, rng)?,
                classifier: Linear::new(store, "y'", d / 2, labels.len(), Activation::Identity, rng)?,
            },
            AnswerSpace::Count { min, max } => Head::Count {
                trunk: Trunk::new(store, o_dim, d, rng)?,
                regressor: Linear::new(store, "c", d / 2, 1, Activation::Identity, rng)?,
                min: *min,
                max: *max,
            },
            AnswerSpace::MultiChoice { .. } => Head::MultiChoice {
                ww: Linear::new(store, "w", d, d, Activation::Identity, rng)?,
                wa: Linear::new(store, "a", d, d, Activation::Identity, rng)?,
                wy: Linear::new(store, "y", 2 * o_dim + 2 * d, d, Activation::Relu, rng)?,
                scorer: Linear::new(store, "y'", d, 1, Activation::Identity, rng)?,
            },
        })
    }

    /// Label probabilities `p = softmax(W_y' y' + b)`.
    pub fn open_ended<T: Scalar>(&self, p: &Bound<'_, T>, o: &Tensor<T>, u_bar: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Head::OpenEnded { trunk, classifier } => {
                let y = trunk.forward(p, o, u_bar)?;
                Ok(classifier.forward(p, &y)?.softmax(0, 1.0)?)
            }
            _ => Err(self.mismatch("open_ended")),
        }
    }

    /// Unrounded count as a one-element tensor.
    pub fn count<T: Scalar>(&self, p: &Bound<'_, T>, o: &Tensor<T>, u_bar: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Head::Count { trunk, regressor, .. } => {
                let y = trunk.forward(p, o, u_bar)?;
                regressor.forward(p, &y)
            }
            _ => Err(self.mismatch("count")),
        }
    }

    /// Score of one candidate: `W_y' relu(W_y [o, o_a, W_w ū + b, W_a ā + b] + b) + b`.
    pub fn multichoice_score<T: Scalar>(
        &self,
        p: &Bound<'_, T>,
        o: &Tensor<T>,
        o_a: &Tensor<T>,
        u_bar: &Tensor<T>,
        a_bar: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        match self {
            Head::MultiChoice { ww, wa, wy, scorer } => {
                let y = Tensor::concat_last_axis(&[
                    o.clone(),
                    o_a.clone(),
                    ww.forward(p, u_bar)?,
                    wa.forward(p, a_bar)?,
                ])?;
                scorer.forward(p, &wy.forward(p, &y)?)
            }
            _ => Err(self.mismatch("multi_choice")),
        }
    }

    pub fn task_name(&self) -> &'static str {
        match self {
            Head::OpenEnded { .. } => "open_ended",
            Head::Count { .. } => "count",
            Head::MultiChoice { .. } => "multi_choice",
        }
    }

    fn mismatch(&self, requested: &'static str) -> Error {
        Error::TaskMismatch {
            sample: String::new(),
            expected: self.task_name(),
            found: requested,
        }
    }
}

/// Stacks rank-0 or one-element scores into a vector.
pub fn stack_scores<T: Scalar>(scores: &[Tensor<T>]) -> Result<Tensor<T>> {
    let flat = scores
        .iter()
        .map(|s| s.reshape(vec![1]))
        .collect::<Result<Vec<_>, TensorError>>()?;
    Ok(Tensor::concat_last_axis(&flat)?)
}
