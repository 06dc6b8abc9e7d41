//! The full network: question encoder, visual pipeline and answer head.

use bta_tensor::{Scalar, Tensor, TensorData};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{AnswerSpace, ModelConfig};
use crate::data::{Answer, QaSample, TokenSequence};
use crate::decoders::{self, Fused, Head};
use crate::error::{Error, Result, StageExt};
use crate::interactions::{PassInput, PipelineOutput, VisualPipeline};
use crate::layers::BiGruEncoder;
use crate::params::{Bound, ParamId, ParamStore};

/// One run of the encoder and visual pipeline for a token sequence.
pub struct Pass<T: Scalar> {
    /// Encoded question nodes, `K×d_model`.
    pub u: Tensor<T>,
    pub u_bar: Tensor<T>,
    pub fused: Fused<T>,
    pub pipeline: PipelineOutput<T>,
}

pub enum HeadOutput<T: Scalar> {
    Probabilities(Tensor<T>),
    Count(Tensor<T>),
    Scores(Tensor<T>),
}

pub struct SampleOutput<T: Scalar> {
    pub head: HeadOutput<T>,
    /// The question pass first, then one pass per candidate.
    pub passes: Vec<Pass<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Label { index: usize, probabilities: Vec<f64> },
    Count { raw: f64, answer: u32 },
    Choice { index: usize, scores: Vec<f64> },
}

impl Prediction {
    pub fn is_correct(&self, answer: Answer) -> bool {
        match (self, answer) {
            (Prediction::Label { index, .. }, Answer::Label(l)) => *index == l,
            (Prediction::Count { answer: a, .. }, Answer::Count(c)) => *a == c,
            (Prediction::Choice { index, .. }, Answer::Choice(c)) => *index == c,
            _ => false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub encoder: BiGruEncoder,
    pub pipeline: VisualPipeline,
    pub head: Head,
}

impl<T: Scalar> Model<T> {
    /// Builds every layer, drawing initial weights from a seeded stream in
    /// a fixed order.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let encoder = BiGruEncoder::new(&mut params, config.word_dim, config.d_model, &mut rng)?;
        let pipeline = VisualPipeline::new(&mut params, &config, &mut rng)?;
        let head = Head::new(&mut params, &config, &mut rng)?;
        Ok(Self {
            config,
            params,
            encoder,
            pipeline,
            head,
        })
    }

    /// Encoder, graphs, interactions and pooling for one token sequence.
    pub fn pass(
        &self,
        p: &Bound<'_, T>,
        appearance: &TensorData<T>,
        motion: &TensorData<T>,
        question: &TokenSequence<T>,
    ) -> Result<Pass<T>> {
        let u = self
            .encoder
            .encode(p, &Tensor::constant(&question.embeddings))
            .stage("question encoder")?;
        let pipeline = self.pipeline.forward(
            p,
            &PassInput {
                appearance,
                motion,
                u: &u,
                edges: &question.edges,
            },
        )?;
        let v = &pipeline.visuals;
        let fused = decoders::fuse_pool(v.v_f.as_ref(), v.m_f.as_ref()).stage("pooling")?;
        let u_bar = u.mean_axis(0).stage("pooling")?;
        Ok(Pass {
            u,
            u_bar,
            fused,
            pipeline,
        })
    }

    pub fn forward(&self, p: &Bound<'_, T>, sample: &QaSample<T>) -> Result<SampleOutput<T>> {
        self.check_task(sample)?;
        let main = self.pass(p, &sample.appearance, &sample.motion, &sample.question)?;
        let (head, passes) = match &self.config.answer_space {
            AnswerSpace::OpenEnded { .. } => {
                let probs = self.head.open_ended(p, &main.fused.o, &main.u_bar).stage("decoder")?;
                (HeadOutput::Probabilities(probs), vec![main])
            }
            AnswerSpace::Count { .. } => {
                let raw = self.head.count(p, &main.fused.o, &main.u_bar).stage("decoder")?;
                (HeadOutput::Count(raw), vec![main])
            }
            AnswerSpace::MultiChoice { candidates } => {
                if sample.candidates.len() != *candidates {
                    return Err(Error::MissingCandidates {
                        sample: sample.id.clone(),
                        expected: *candidates,
                        found: sample.candidates.len(),
                    });
                }
                let k = sample.question.len();
                let mut passes = vec![main];
                let mut scores = Vec::with_capacity(*candidates);
                for cand in &sample.candidates {
                    let joint = sample.question.append(cand)?;
                    let cp = self.pass(p, &sample.appearance, &sample.motion, &joint)?;
                    let a_bar = cp.u.narrow(0, k, cand.len())?.mean_axis(0)?;
                    let s = self
                        .head
                        .multichoice_score(p, &passes[0].fused.o, &cp.fused.o, &passes[0].u_bar, &a_bar)
                        .stage("decoder")?;
                    scores.push(s);
                    passes.push(cp);
                }
                let scores = decoders::stack_scores(&scores).stage("decoder")?;
                (HeadOutput::Scores(scores), passes)
            }
        };
        Ok(SampleOutput { head, passes })
    }

    /// Task loss of a forward output against the sample's answer.
    pub fn loss(&self, out: &HeadOutput<T>, answer: Answer) -> Result<Tensor<T>> {
        match (out, answer) {
            (HeadOutput::Probabilities(p), Answer::Label(l)) => decoders::cross_entropy_loss(p, l),
            (HeadOutput::Count(raw), Answer::Count(c)) => decoders::mse_loss(raw, f64::from(c)),
            (HeadOutput::Scores(s), Answer::Choice(c)) => decoders::hinge_loss(s, c),
            _ => Err(Error::TaskMismatch {
                sample: String::new(),
                expected: self.config.task().name(),
                found: answer.kind().name(),
            }),
        }
    }

    pub fn prediction(&self, out: &HeadOutput<T>) -> Result<Prediction> {
        Ok(match out {
            HeadOutput::Probabilities(p) => {
                let probabilities: Vec<f64> = p.data().iter().map(|v| v.as_f64()).collect();
                Prediction::Label {
                    index: decoders::select_answer(&probabilities)?,
                    probabilities,
                }
            }
            HeadOutput::Count(raw) => {
                let raw = raw.data()[0].as_f64();
                let (min, max) = match self.config.answer_space {
                    AnswerSpace::Count { min, max } => (min, max),
                    _ => unreachable!("count output only comes from a count head"),
                };
                Prediction::Count {
                    raw,
                    answer: decoders::round_count(raw, min, max),
                }
            }
            HeadOutput::Scores(s) => {
                let scores: Vec<f64> = s.data().iter().map(|v| v.as_f64()).collect();
                Prediction::Choice {
                    index: decoders::select_answer(&scores)?,
                    scores,
                }
            }
        })
    }

    /// Inference without gradient tracking.
    pub fn predict(&self, sample: &QaSample<T>) -> Result<Prediction> {
        let p = Bound::inference(&self.params);
        let out = self.forward(&p, sample)?;
        self.prediction(&out.head)
    }

    /// Loss of one sample and the gradients of `scale * loss`.
    pub fn loss_and_grads(&self, sample: &QaSample<T>, scale: f64) -> Result<(f64, Vec<(ParamId, TensorData<T>)>)> {
        let p = Bound::training(&self.params);
        let out = self.forward(&p, sample)?;
        let loss = self.loss(&out.head, sample.answer)?;
        let value = loss.item()?.as_f64();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                sample: sample.id.clone(),
                loss: value,
            });
        }
        loss.scale(scale).backward()?;
        drop(out);
        Ok((value, p.into_grads()))
    }

    fn check_task(&self, sample: &QaSample<T>) -> Result<()> {
        let expected = self.config.task();
        let found = sample.answer.kind();
        if expected != found {
            return Err(Error::TaskMismatch {
                sample: sample.id.clone(),
                expected: expected.name(),
                found: found.name(),
            });
        }
        Ok(())
    }
}
