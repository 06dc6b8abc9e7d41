//! Dataset manifests: a JSON document referencing binary tensor files.
//!
//! Tensor paths are relative to the manifest's directory.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use bta_tensor::{Scalar, TensorData};
use serde::{Deserialize, Serialize};

use super::tensor_file::{read_tensor_file, write_tensor_file};
use super::{write_atomic, DataError};
use crate::config::{AnswerSpace, TaskKind};
use crate::data::{Answer, Dataset, QaSample, TokenSequence};
use crate::error::{Error, Result};
use crate::graph::DependencyEdge;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestAnswerSpace {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count_range: Option<(u32, u32)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSequence {
    pub tokens: Vec<String>,
    pub embeddings: PathBuf,
    #[serde(default)]
    pub edges: Vec<DependencyEdge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSample {
    pub id: String,
    pub appearance: PathBuf,
    pub motion: PathBuf,
    pub tokens: Vec<String>,
    pub embeddings: PathBuf,
    #[serde(default)]
    pub edges: Vec<DependencyEdge>,
    /// Label index, integer count or correct candidate index.
    pub answer: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<ManifestSequence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    pub task: TaskKind,
    pub answer_space: ManifestAnswerSpace,
    pub clips: usize,
    pub frames_per_clip: usize,
    pub feature_dim: usize,
    pub word_dim: usize,
    pub samples: Vec<ManifestSample>,
}

impl Manifest {
    pub fn answer_space(&self) -> Result<AnswerSpace> {
        let a = &self.answer_space;
        let space = match (self.task, &a.labels, a.count_range, a.candidates) {
            (TaskKind::OpenEnded, Some(labels), None, None) => AnswerSpace::OpenEnded {
                labels: labels.clone(),
            },
            (TaskKind::Count, None, Some((min, max)), None) => AnswerSpace::Count { min, max },
            (TaskKind::MultiChoice, None, None, Some(candidates)) => AnswerSpace::MultiChoice { candidates },
            _ => {
                return Err(DataError::Manifest(format!(
                    "answer space {a:?} does not describe a {} task",
                    self.task.name()
                ))
                .into())
            }
        };
        space.validate()?;
        Ok(space)
    }
}

fn load_tensor<T: Scalar>(dir: &Path, rel: &Path, sample: &str) -> Result<TensorData<T>> {
    let path = dir.join(rel);
    if !path.is_file() {
        return Err(DataError::MissingFile {
            sample: sample.to_string(),
            path,
        }
        .into());
    }
    match read_tensor_file(&path) {
        Ok(t) => Ok(t.cast()),
        Err(Error::Format(source)) => Err(DataError::TensorFile {
            sample: sample.to_string(),
            path,
            source,
        }
        .into()),
        Err(e) => Err(e),
    }
}

fn load_sequence<T: Scalar>(
    dir: &Path,
    sample: &str,
    tokens: &[String],
    embeddings: &Path,
    edges: &[DependencyEdge],
) -> Result<TokenSequence<T>> {
    if tokens.is_empty() {
        return Err(DataError::EmptyQuestion {
            sample: sample.to_string(),
            what: "question".into(),
        }
        .into());
    }
    let embeddings = load_tensor::<T>(dir, embeddings, sample)?;
    let rows = embeddings.shape().first().copied().unwrap_or(0);
    if rows != tokens.len() {
        return Err(DataError::TokenCount {
            sample: sample.to_string(),
            tokens: tokens.len(),
            rows,
        }
        .into());
    }
    Ok(TokenSequence {
        tokens: tokens.to_vec(),
        embeddings,
        edges: edges.to_vec(),
    })
}

/// Parses a manifest, loads every referenced tensor as `T` and validates
/// all shapes, indices and answers.
pub fn load_manifest<T: Scalar>(path: &Path) -> Result<Dataset<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| DataError::Manifest(format!("{}: {e}", path.display())))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let answer_space = manifest.answer_space()?;
    let mut seen = BTreeSet::new();
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for s in &manifest.samples {
        if !seen.insert(s.id.as_str()) {
            return Err(DataError::DuplicateSample(s.id.clone()).into());
        }
        let question = load_sequence(dir, &s.id, &s.tokens, &s.embeddings, &s.edges)?;
        let candidates = s
            .candidates
            .iter()
            .map(|c| load_sequence(dir, &s.id, &c.tokens, &c.embeddings, &c.edges))
            .collect::<Result<Vec<_>>>()?;
        let answer = match manifest.task {
            TaskKind::OpenEnded => Answer::Label(s.answer as usize),
            TaskKind::Count => Answer::Count(s.answer),
            TaskKind::MultiChoice => Answer::Choice(s.answer as usize),
        };
        samples.push(QaSample {
            id: s.id.clone(),
            appearance: load_tensor(dir, &s.appearance, &s.id)?,
            motion: load_tensor(dir, &s.motion, &s.id)?,
            question,
            answer,
            candidates,
        });
    }
    let dataset = Dataset {
        name: manifest.name,
        answer_space,
        clips: manifest.clips,
        frames_per_clip: manifest.frames_per_clip,
        feature_dim: manifest.feature_dim,
        word_dim: manifest.word_dim,
        samples,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Writes `dataset` as `dir/manifest.json` plus one tensor file per array
/// under `dir/features`. Returns the manifest path.
pub fn save_manifest<T: Scalar>(dataset: &Dataset<T>, dir: &Path) -> Result<PathBuf> {
    let features = dir.join("features");
    std::fs::create_dir_all(&features).map_err(|e| Error::io(&features, e))?;
    let write = |name: String, t: &TensorData<T>| -> Result<PathBuf> {
        let rel = PathBuf::from("features").join(name);
        write_tensor_file(t, &dir.join(&rel))?;
        Ok(rel)
    };
    let mut samples = Vec::with_capacity(dataset.samples.len());
    for s in &dataset.samples {
        let id = &s.id;
        let candidates = s
            .candidates
            .iter()
            .enumerate()
            .map(|(i, c)| {
                Ok(ManifestSequence {
                    tokens: c.tokens.clone(),
                    embeddings: write(format!("{id}.cand{i}.btat"), &c.embeddings)?,
                    edges: c.edges.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let answer = match s.answer {
            Answer::Label(l) | Answer::Choice(l) => l as u32,
            Answer::Count(c) => c,
        };
        samples.push(ManifestSample {
            id: id.clone(),
            appearance: write(format!("{id}.appearance.btat"), &s.appearance)?,
            motion: write(format!("{id}.motion.btat"), &s.motion)?,
            tokens: s.question.tokens.clone(),
            embeddings: write(format!("{id}.question.btat"), &s.question.embeddings)?,
            edges: s.question.edges.clone(),
            answer,
            candidates,
        });
    }
    let answer_space = match &dataset.answer_space {
        AnswerSpace::OpenEnded { labels } => ManifestAnswerSpace {
            labels: Some(labels.clone()),
            count_range: None,
            candidates: None,
        },
        AnswerSpace::Count { min, max } => ManifestAnswerSpace {
            labels: None,
            count_range: Some((*min, *max)),
            candidates: None,
        },
        AnswerSpace::MultiChoice { candidates } => ManifestAnswerSpace {
            labels: None,
            count_range: None,
            candidates: Some(*candidates),
        },
    };
    let manifest = Manifest {
        name: dataset.name.clone(),
        task: dataset.task(),
        answer_space,
        clips: dataset.clips,
        frames_per_clip: dataset.frames_per_clip,
        feature_dim: dataset.feature_dim,
        word_dim: dataset.word_dim,
        samples,
    };
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}
