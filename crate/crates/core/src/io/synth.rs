//! Seeded synthetic datasets whose answers are planted functions of the
//! features.

use std::path::{Path, PathBuf};

use bta_tensor::TensorData;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::manifest::save_manifest;
use super::write_atomic;
use crate::config::{AnswerSpace, TaskKind};
use crate::data::{Answer, Dataset, QaSample, TokenSequence};
use crate::error::{Error, Result};
use crate::graph::DependencyEdge;

const QUESTION_VOCAB: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub task: TaskKind,
    pub seed: u64,
    pub samples: usize,
    pub clips: usize,
    pub frames_per_clip: usize,
    pub tokens: usize,
    pub feature_dim: usize,
    pub word_dim: usize,
    /// Open-ended label count.
    pub labels: usize,
    /// Multiple-choice candidates per question.
    pub candidates: usize,
    /// Largest planted count; the answer range is `[1, count_max]`.
    pub count_max: u32,
    /// Standard deviation of the distractor noise.
    pub noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            task: TaskKind::OpenEnded,
            seed: 0,
            samples: 16,
            clips: 4,
            frames_per_clip: 4,
            tokens: 6,
            feature_dim: 32,
            word_dim: 300,
            labels: 4,
            candidates: 4,
            count_max: 4,
            noise: 0.3,
        }
    }
}

impl SynthSpec {
    pub fn new(task: TaskKind, seed: u64) -> Self {
        Self {
            task,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.samples,
            self.clips,
            self.frames_per_clip,
            self.tokens,
            self.feature_dim,
            self.word_dim,
        ];
        if positive.contains(&0) {
            return Err(Error::Config("synthetic sizes must be at least 1".into()));
        }
        match self.task {
            TaskKind::OpenEnded if self.labels < 2 => Err(Error::Config("need at least 2 labels".into())),
            TaskKind::MultiChoice if self.candidates < 2 => Err(Error::Config("need at least 2 candidates".into())),
            TaskKind::Count if self.count_max == 0 || self.count_max as usize > self.clips => Err(Error::Config(
                format!("count_max must lie in [1, clips = {}]", self.clips),
            )),
            _ if !(self.noise >= 0.0 && self.noise.is_finite()) => Err(Error::Config("noise must be >= 0".into())),
            _ => Ok(()),
        }
    }
}

/// Generator-side record of what was planted in each sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSample {
    pub id: String,
    /// Clips carrying a burst (count task).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub burst_clips: Vec<usize>,
    /// Concept shown in the frames, then the concept of each candidate
    /// (multiple choice).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concept: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidate_concepts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Planted {
    pub spec: SynthSpec,
    /// Motion prototypes, one per label (open-ended).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub prototypes: Vec<Vec<f32>>,
    /// Unit burst direction (count).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub burst_direction: Vec<f32>,
    #[serde(default)]
    pub burst_amplitude: f32,
    /// Appearance direction of each concept (multiple choice).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub concept_directions: Vec<Vec<f32>>,
    pub samples: Vec<PlantedSample>,
}

/// Label whose prototype is nearest the mean of the clip features.
pub fn nearest_prototype(motion: &TensorData<f32>, prototypes: &[Vec<f32>]) -> usize {
    let (n, d) = motion.dims2().expect("motion is a matrix");
    let mean: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| f64::from(motion.at(i, j))).sum::<f64>() / n as f64)
        .collect();
    let dist = |p: &Vec<f32>| -> f64 { p.iter().zip(&mean).map(|(&a, &b)| (f64::from(a) - b).powi(2)).sum() };
    let mut best = 0;
    for (c, p) in prototypes.iter().enumerate().skip(1) {
        if dist(p) < dist(&prototypes[best]) {
            best = c;
        }
    }
    best
}

/// Clips whose projection on the burst direction exceeds half the
/// amplitude.
pub fn count_bursts(motion: &TensorData<f32>, direction: &[f32], amplitude: f32) -> u32 {
    motion
        .rows()
        .iter()
        .filter(|r| {
            let proj: f64 = r.iter().zip(direction).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum();
            proj > f64::from(amplitude) / 2.0
        })
        .count() as u32
}

struct Gen {
    rng: ChaCha8Rng,
}

impl Gen {
    fn normal(&mut self, n: usize, std: f64) -> Vec<f32> {
        (0..n)
            .map(|_| (self.rng.sample::<f64, _>(StandardNormal) * std) as f32)
            .collect()
    }

    fn matrix(&mut self, rows: usize, cols: usize, std: f64) -> TensorData<f32> {
        TensorData::new(vec![rows, cols], self.normal(rows * cols, std)).expect("sized")
    }

    fn unit(&mut self, n: usize) -> Vec<f32> {
        let v = self.normal(n, 1.0);
        let norm = v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        v.iter().map(|&x| (f64::from(x) / norm) as f32).collect()
    }

    /// Random tree: token `i > 0` depends on a uniformly chosen earlier token.
    fn tree(&mut self, k: usize) -> Vec<DependencyEdge> {
        (1..k)
            .map(|i| DependencyEdge::new(self.rng.random_range(0..i), i, "dep"))
            .collect()
    }

    fn question(&mut self, k: usize, vocab: &[Vec<f32>]) -> TokenSequence<f32> {
        let ids: Vec<usize> = (0..k).map(|_| self.rng.random_range(0..vocab.len())).collect();
        let data = ids.iter().flat_map(|&i| vocab[i].iter().copied()).collect();
        TokenSequence {
            tokens: ids.iter().map(|i| format!("w{i}")).collect(),
            embeddings: TensorData::new(vec![k, vocab[0].len()], data).expect("sized"),
            edges: self.tree(k),
        }
    }
}

/// Builds the dataset in memory together with the planted ground truth.
pub fn generate(spec: &SynthSpec) -> Result<(Dataset<f32>, Planted)> {
    spec.validate()?;
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
    };
    let (n, l, d) = (spec.clips, spec.clips * spec.frames_per_clip, spec.feature_dim);
    let vocab: Vec<Vec<f32>> = (0..QUESTION_VOCAB).map(|_| g.normal(spec.word_dim, 1.0)).collect();
    let mut planted = Planted {
        spec: spec.clone(),
        prototypes: Vec::new(),
        burst_direction: Vec::new(),
        burst_amplitude: 0.0,
        concept_directions: Vec::new(),
        samples: Vec::new(),
    };
    let concepts = 2 * spec.candidates;
    let concept_words: Vec<Vec<f32>>;
    let answer_space = match spec.task {
        TaskKind::OpenEnded => {
            planted.prototypes = (0..spec.labels).map(|_| g.normal(d, 1.0)).collect();
            concept_words = Vec::new();
            AnswerSpace::OpenEnded {
                labels: (0..spec.labels).map(|i| format!("label{i}")).collect(),
            }
        }
        TaskKind::Count => {
            planted.burst_direction = g.unit(d);
            planted.burst_amplitude = 3.0;
            concept_words = Vec::new();
            AnswerSpace::Count {
                min: 1,
                max: spec.count_max,
            }
        }
        TaskKind::MultiChoice => {
            planted.concept_directions = (0..concepts).map(|_| g.normal(d, 1.0)).collect();
            concept_words = (0..concepts).map(|_| g.normal(spec.word_dim, 1.0)).collect();
            AnswerSpace::MultiChoice {
                candidates: spec.candidates,
            }
        }
    };

    let mut samples = Vec::with_capacity(spec.samples);
    for i in 0..spec.samples {
        let id = format!("s{i:04}");
        let question = g.question(spec.tokens, &vocab);
        let mut record = PlantedSample {
            id: id.clone(),
            burst_clips: Vec::new(),
            concept: None,
            candidate_concepts: Vec::new(),
        };
        let mut candidates = Vec::new();
        let (appearance, motion, answer) = match spec.task {
            TaskKind::OpenEnded => {
                let label = i % spec.labels;
                let mut motion = g.matrix(n, d, spec.noise);
                for (j, v) in motion.data_mut().iter_mut().enumerate() {
                    *v += planted.prototypes[label][j % d];
                }
                let label = nearest_prototype(&motion, &planted.prototypes);
                (g.matrix(l, d, 1.0), motion, Answer::Label(label))
            }
            TaskKind::Count => {
                let count = g.rng.random_range(1..=spec.count_max) as usize;
                let mut clips: Vec<usize> = (0..n).collect();
                clips.shuffle(&mut g.rng);
                let mut bursts = clips[..count].to_vec();
                bursts.sort_unstable();
                let b = &planted.burst_direction;
                let mut motion = g.matrix(n, d, 1.0);
                for c in 0..n {
                    let row = &mut motion.data_mut()[c * d..(c + 1) * d];
                    let proj: f64 = row.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum();
                    let shift = if bursts.contains(&c) {
                        f64::from(planted.burst_amplitude)
                    } else {
                        0.0
                    };
                    for (x, &y) in row.iter_mut().zip(b) {
                        *x = (f64::from(*x) + (shift - proj) * f64::from(y)) as f32;
                    }
                }
                record.burst_clips = bursts;
                (g.matrix(l, d, 1.0), motion, Answer::Count(count as u32))
            }
            TaskKind::MultiChoice => {
                let mut pool: Vec<usize> = (0..concepts).collect();
                pool.shuffle(&mut g.rng);
                let chosen = pool[..spec.candidates].to_vec();
                let correct = g.rng.random_range(0..spec.candidates);
                let concept = chosen[correct];
                let mut appearance = g.matrix(l, d, spec.noise);
                for (j, v) in appearance.data_mut().iter_mut().enumerate() {
                    *v += planted.concept_directions[concept][j % d];
                }
                for &c in &chosen {
                    let noise = g.normal(spec.word_dim, spec.noise);
                    let emb = concept_words[c].iter().zip(noise).map(|(a, b)| a + b).collect();
                    candidates.push(TokenSequence {
                        tokens: vec![format!("concept{c}")],
                        embeddings: TensorData::new(vec![1, spec.word_dim], emb).expect("sized"),
                        edges: Vec::new(),
                    });
                }
                record.concept = Some(concept);
                record.candidate_concepts = chosen;
                (appearance, g.matrix(n, d, 1.0), Answer::Choice(correct))
            }
        };
        planted.samples.push(record);
        samples.push(QaSample {
            id,
            appearance,
            motion,
            question,
            answer,
            candidates,
        });
    }
    let dataset = Dataset {
        name: format!("synthetic-{}-{}", spec.task.name(), spec.seed),
        answer_space,
        clips: n,
        frames_per_clip: spec.frames_per_clip,
        feature_dim: d,
        word_dim: spec.word_dim,
        samples,
    };
    dataset.validate()?;
    Ok((dataset, planted))
}

/// Writes the dataset under `dir` (manifest, tensor files and
/// `planted.json`). Returns the manifest path.
pub fn write_synthetic(spec: &SynthSpec, dir: &Path) -> Result<PathBuf> {
    let (dataset, planted) = generate(spec)?;
    let manifest = save_manifest(&dataset, dir)?;
    let mut text = serde_json::to_string_pretty(&planted).expect("planted record serializes");
    text.push('\n');
    write_atomic(&dir.join("planted.json"), text.as_bytes())?;
    Ok(manifest)
}
