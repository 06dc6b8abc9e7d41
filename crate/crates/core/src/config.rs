//! Architecture, ablation and training configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    OpenEnded,
    Count,
    MultiChoice,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::OpenEnded => "open_ended",
            TaskKind::Count => "count",
            TaskKind::MultiChoice => "multi_choice",
        }
    }
}

/// The set of answers a model decodes into.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum AnswerSpace {
    OpenEnded { labels: Vec<String> },
    Count { min: u32, max: u32 },
    MultiChoice { candidates: usize },
}

impl AnswerSpace {
    pub fn kind(&self) -> TaskKind {
        match self {
            AnswerSpace::OpenEnded { .. } => TaskKind::OpenEnded,
            AnswerSpace::Count { .. } => TaskKind::Count,
            AnswerSpace::MultiChoice { .. } => TaskKind::MultiChoice,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AnswerSpace::OpenEnded { labels } if labels.len() < 2 => Err(Error::Config(format!(
                "open-ended answer space needs at least 2 labels, got {}",
                labels.len()
            ))),
            AnswerSpace::Count { min, max } if min > max => {
                Err(Error::Config(format!("count range [{min}, {max}] is empty")))
            }
            AnswerSpace::MultiChoice { candidates } if *candidates < 2 => Err(Error::Config(format!(
                "multiple choice needs at least 2 candidates, got {candidates}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Components switched off for an ablation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub no_appearance: bool,
    pub no_motion: bool,
    pub no_q2a: bool,
    pub no_q2m: bool,
    /// No appearance-to-motion delivery.
    pub no_a2m: bool,
    /// No motion-to-appearance delivery.
    pub no_m2a: bool,
    /// Visual-to-visual interaction by direct affinity, without the question graph.
    pub no_bridge: bool,
}

impl Ablation {
    /// Flag names accepted by [`Ablation::apply`].
    pub const NAMES: [&'static str; 9] = [
        "no-appearance",
        "no-motion",
        "no-q2a",
        "no-q2m",
        "no-q2v",
        "no-a2m",
        "no-m2a",
        "no-v2v",
        "no-bridge",
    ];

    pub fn full() -> Self {
        Self::default()
    }

    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let mut a = Self::default();
        for n in names {
            a.apply(n.as_ref())?;
        }
        a.validate()?;
        Ok(a)
    }

    pub fn apply(&mut self, name: &str) -> Result<()> {
        match name {
            "no-appearance" => self.no_appearance = true,
            "no-motion" => self.no_motion = true,
            "no-q2a" => self.no_q2a = true,
            "no-q2m" => self.no_q2m = true,
            "no-q2v" => (self.no_q2a, self.no_q2m) = (true, true),
            "no-a2m" => self.no_a2m = true,
            "no-m2a" => self.no_m2a = true,
            "no-v2v" => (self.no_a2m, self.no_m2a) = (true, true),
            "no-bridge" => self.no_bridge = true,
            other => {
                return Err(Error::Config(format!(
                    "unknown ablation {other:?}; expected one of {}",
                    Self::NAMES.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.no_appearance && self.no_motion {
            return Err(Error::Config("cannot remove both appearance and motion".into()));
        }
        Ok(())
    }

    /// The ablation rows of the interaction study, in table order.
    pub fn table() -> Vec<(&'static str, Ablation)> {
        let of = |names: &[&str]| Self::from_names(names).expect("table ablations are valid");
        vec![
            ("w/o appearance", of(&["no-appearance"])),
            ("w/o motion", of(&["no-motion"])),
            ("w/o Q2V, V2V", of(&["no-q2v", "no-v2v"])),
            ("w/o Q2A", of(&["no-q2a"])),
            ("w/o Q2M", of(&["no-q2m"])),
            ("w/o Q2V", of(&["no-q2v"])),
            ("w/o A2M", of(&["no-a2m"])),
            ("w/o M2A", of(&["no-m2a"])),
            ("w/o V2V", of(&["no-v2v"])),
            ("w/o bridge", of(&["no-bridge"])),
        ]
    }

    pub fn appearance(&self) -> bool {
        !self.no_appearance
    }

    pub fn motion(&self) -> bool {
        !self.no_motion
    }

    pub fn q2a(&self) -> bool {
        self.appearance() && !self.no_q2a
    }

    pub fn q2m(&self) -> bool {
        self.motion() && !self.no_q2m
    }

    /// Appearance nodes receive motion information.
    pub fn m2a(&self) -> bool {
        self.appearance() && self.motion() && !self.no_m2a
    }

    /// Motion nodes receive appearance information.
    pub fn a2m(&self) -> bool {
        self.appearance() && self.motion() && !self.no_a2m
    }

    /// Number of pooled visual streams feeding the decoder.
    pub fn streams(&self) -> usize {
        usize::from(self.appearance()) + usize::from(self.motion())
    }

    /// Names of the active flags.
    pub fn names(&self) -> Vec<&'static str> {
        [
            (self.no_appearance, "no-appearance"),
            (self.no_motion, "no-motion"),
            (self.no_q2a, "no-q2a"),
            (self.no_q2m, "no-q2m"),
            (self.no_a2m, "no-a2m"),
            (self.no_m2a, "no-m2a"),
            (self.no_bridge, "no-bridge"),
        ]
        .into_iter()
        .filter_map(|(on, n)| on.then_some(n))
        .collect()
    }
}

fn default_word_dim() -> usize {
    300
}

fn default_gcn_layers() -> usize {
    2
}

fn default_lambda() -> f64 {
    10.0
}

/// Network sizes and switches. `fused_dim` defaults to `d_model / 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Width of the raw appearance and motion features.
    pub feature_dim: usize,
    #[serde(default = "default_word_dim")]
    pub word_dim: usize,
    pub d_model: usize,
    #[serde(default)]
    pub fused_dim: Option<usize>,
    #[serde(default = "default_gcn_layers")]
    pub gcn_layers: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Add an identity to the question weight matrix inside the graph
    /// convolution. Off by default because the adjacency already has one.
    #[serde(default)]
    pub question_self_loops: bool,
    #[serde(default)]
    pub ablation: Ablation,
    pub answer_space: AnswerSpace,
}

impl ModelConfig {
    pub fn new(feature_dim: usize, word_dim: usize, d_model: usize, answer_space: AnswerSpace) -> Self {
        Self {
            feature_dim,
            word_dim,
            d_model,
            fused_dim: None,
            gcn_layers: default_gcn_layers(),
            lambda: default_lambda(),
            question_self_loops: false,
            ablation: Ablation::default(),
            answer_space,
        }
    }

    pub fn fused_dim(&self) -> usize {
        self.fused_dim.unwrap_or(self.d_model / 2)
    }

    pub fn task(&self) -> TaskKind {
        self.answer_space.kind()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.feature_dim == 0 || self.word_dim == 0 {
            return bad("feature and word dimensions must be positive".into());
        }
        if self.d_model < 2 || !self.d_model.is_multiple_of(2) {
            return bad(format!("d_model must be even and at least 2, got {}", self.d_model));
        }
        if self.fused_dim() == 0 {
            return bad("fused_dim must be positive".into());
        }
        if self.gcn_layers == 0 {
            return bad("gcn_layers must be at least 1".into());
        }
        if !self.lambda.is_finite() {
            return bad(format!("lambda must be finite, got {}", self.lambda));
        }
        self.ablation.validate()?;
        self.answer_space.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

fn default_epochs() -> usize {
    25
}

fn default_batch() -> usize {
    16
}

fn default_lr() -> f64 {
    1e-4
}

fn default_decay() -> f64 {
    0.5
}

fn default_decay_every() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_decay")]
    pub lr_decay: f64,
    #[serde(default = "default_decay_every")]
    pub decay_every: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            batch_size: default_batch(),
            learning_rate: default_lr(),
            lr_decay: default_decay(),
            decay_every: default_decay_every(),
            seed: 0,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    /// Same schedule shape stretched over `epochs`: the number of decays
    /// stays that of the default 25-epoch run.
    pub fn compressed(epochs: usize) -> Self {
        let d = Self::default();
        Self {
            epochs,
            decay_every: (epochs * d.decay_every / d.epochs).max(1),
            ..d
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.decay_every == 0 {
            return Err(Error::Config(
                "epochs, batch_size and decay_every must be at least 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}
