//! In-memory question answering samples and datasets.

use bta_tensor::{Scalar, TensorData};

use crate::config::{AnswerSpace, TaskKind};
use crate::error::{Error, Result};
use crate::graph::{self, DependencyEdge};
use crate::io::DataError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Answer {
    Label(usize),
    Count(u32),
    Choice(usize),
}

impl Answer {
    pub fn kind(self) -> TaskKind {
        match self {
            Answer::Label(_) => TaskKind::OpenEnded,
            Answer::Count(_) => TaskKind::Count,
            Answer::Choice(_) => TaskKind::MultiChoice,
        }
    }
}

/// Tokens of a question or answer candidate with their embeddings and
/// dependency edges.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence<T> {
    pub tokens: Vec<String>,
    /// `K×word_dim`.
    pub embeddings: TensorData<T>,
    pub edges: Vec<DependencyEdge>,
}

impl<T: Scalar> TokenSequence<T> {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// `self` followed by `other`, with `other`'s edges shifted past `self`.
    pub fn append(&self, other: &Self) -> Result<Self> {
        let k = self.len();
        let tokens = self.tokens.iter().chain(&other.tokens).cloned().collect();
        let width = self.embeddings.shape().get(1).copied().unwrap_or(0);
        let mut data = self.embeddings.data().to_vec();
        data.extend_from_slice(other.embeddings.data());
        let embeddings = TensorData::new(vec![k + other.len(), width], data)?;
        let edges = self
            .edges
            .iter()
            .cloned()
            .chain(other.edges.iter().map(|e| e.shifted(k)))
            .collect();
        Ok(Self {
            tokens,
            embeddings,
            edges,
        })
    }

    pub fn cast<U: Scalar>(&self) -> TokenSequence<U> {
        TokenSequence {
            tokens: self.tokens.clone(),
            embeddings: self.embeddings.cast(),
            edges: self.edges.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QaSample<T> {
    pub id: String,
    /// `L×feature_dim` frame features, clip-major.
    pub appearance: TensorData<T>,
    /// `N×feature_dim` clip features.
    pub motion: TensorData<T>,
    pub question: TokenSequence<T>,
    pub answer: Answer,
    /// Answer candidates; empty unless the task is multiple choice.
    pub candidates: Vec<TokenSequence<T>>,
}

impl<T: Scalar> QaSample<T> {
    pub fn cast<U: Scalar>(&self) -> QaSample<U> {
        QaSample {
            id: self.id.clone(),
            appearance: self.appearance.cast(),
            motion: self.motion.cast(),
            question: self.question.cast(),
            answer: self.answer,
            candidates: self.candidates.iter().map(TokenSequence::cast).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub name: String,
    pub answer_space: AnswerSpace,
    pub clips: usize,
    pub frames_per_clip: usize,
    pub feature_dim: usize,
    pub word_dim: usize,
    pub samples: Vec<QaSample<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn task(&self) -> TaskKind {
        self.answer_space.kind()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample(&self, id: &str) -> Result<&QaSample<T>> {
        self.samples
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| DataError::UnknownSample(id.to_string()).into())
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            name: self.name.clone(),
            answer_space: self.answer_space.clone(),
            clips: self.clips,
            frames_per_clip: self.frames_per_clip,
            feature_dim: self.feature_dim,
            word_dim: self.word_dim,
            samples: self.samples.iter().map(QaSample::cast).collect(),
        }
    }

    /// Dataset with the samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            ..self.without_samples()
        }
    }

    fn without_samples(&self) -> Self {
        Self {
            name: self.name.clone(),
            answer_space: self.answer_space.clone(),
            clips: self.clips,
            frames_per_clip: self.frames_per_clip,
            feature_dim: self.feature_dim,
            word_dim: self.word_dim,
            samples: Vec::new(),
        }
    }

    /// Checks every shape, index and answer against the declared layout.
    pub fn validate(&self) -> Result<()> {
        self.answer_space.validate()?;
        for s in &self.samples {
            self.validate_sample(s)?;
        }
        Ok(())
    }

    pub fn validate_sample(&self, s: &QaSample<T>) -> Result<()> {
        let id = &s.id;
        let frames = self.clips * self.frames_per_clip;
        check_shape(id, "appearance", &s.appearance, [frames, self.feature_dim])?;
        check_shape(id, "motion", &s.motion, [self.clips, self.feature_dim])?;
        self.validate_sequence(id, "question", &s.question)?;
        match (&self.answer_space, s.answer) {
            (AnswerSpace::OpenEnded { labels }, Answer::Label(l)) if l < labels.len() => {}
            (AnswerSpace::Count { min, max }, Answer::Count(c)) if (*min..=*max).contains(&c) => {}
            (AnswerSpace::MultiChoice { candidates }, Answer::Choice(c)) if c < *candidates => {
                if s.candidates.len() != *candidates {
                    return Err(DataError::CandidateCount {
                        sample: id.clone(),
                        expected: *candidates,
                        found: s.candidates.len(),
                    }
                    .into());
                }
                for (i, c) in s.candidates.iter().enumerate() {
                    self.validate_sequence(id, &format!("candidate {i}"), c)?;
                }
            }
            (space, answer) => {
                return Err(DataError::BadAnswer {
                    sample: id.clone(),
                    detail: format!("{answer:?} does not fit {space:?}"),
                }
                .into())
            }
        }
        Ok(())
    }

    fn validate_sequence(&self, id: &str, what: &str, q: &TokenSequence<T>) -> Result<()> {
        if q.is_empty() {
            return Err(DataError::EmptyQuestion {
                sample: id.to_string(),
                what: what.to_string(),
            }
            .into());
        }
        check_shape(id, what, &q.embeddings, [q.len(), self.word_dim])?;
        graph::validate_edges(&q.edges, q.len()).map_err(|e| -> Error {
            DataError::BadEdge {
                sample: id.to_string(),
                what: what.to_string(),
                detail: e.to_string(),
            }
            .into()
        })
    }
}

fn check_shape<T: Scalar>(id: &str, what: &str, t: &TensorData<T>, expected: [usize; 2]) -> Result<()> {
    if t.shape() != expected {
        return Err(DataError::Shape {
            sample: id.to_string(),
            what: what.to_string(),
            expected: expected.to_vec(),
            found: t.shape().to_vec(),
        }
        .into());
    }
    Ok(())
}
