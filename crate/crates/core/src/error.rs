use std::path::PathBuf;

use bta_tensor::TensorError;
use thiserror::Error;

use crate::io::{DataError, FormatError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("graph convolution: row {row} of the self-looped weight matrix sums to {sum}")]
    DegenerateDegree { row: usize, sum: f64 },
    #[error("question has no tokens")]
    EmptyQuestion,
    #[error("dependency edge ({head}, {dependent}) names token {token}, but the question has {tokens} tokens")]
    EdgeOutOfRange {
        head: usize,
        dependent: usize,
        token: usize,
        tokens: usize,
    },
    #[error("dependency edge links token {0} to itself")]
    SelfEdge(usize),
    #[error("question weight matrix row {0} is entirely zero")]
    ZeroQuestionRow(usize),
    #[error("parameter {0} registered twice")]
    DuplicateParam(String),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("task mismatch: model decodes {expected}, sample {sample} is {found}")]
    TaskMismatch {
        sample: String,
        expected: &'static str,
        found: &'static str,
    },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("sample {sample} has {found} answer candidates, expected {expected}")]
    MissingCandidates {
        sample: String,
        expected: usize,
        found: usize,
    },
    #[error("cannot select an answer from an empty score list")]
    EmptyScores,
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),
    #[error("non-finite loss {loss} on sample {sample}")]
    NonFiniteLoss { sample: String, loss: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint does not match the architecture: {0}")]
    ArchitectureMismatch(String),
    #[error("gradient check failed: {0}")]
    GradCheck(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse failure category, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad inputs, files, configuration or checkpoints.
    Validation,
    /// NaN/inf during training or a failed gradient check.
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Stage { source, .. } => source.class(),
            Error::NonFiniteGradient(_) | Error::NonFiniteLoss { .. } | Error::GradCheck(_) => {
                ErrorClass::Numeric
            }
            Error::DegenerateDegree { sum, .. } if !sum.is_finite() => ErrorClass::Numeric,
            _ => ErrorClass::Validation,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Attaches the name of the pipeline stage to an error.
pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T, E: Into<Error>> StageExt<T> for std::result::Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e.into()),
        })
    }
}
