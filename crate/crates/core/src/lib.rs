//! Graph interaction network for video question answering.
//!
//! Appearance frames, motion clips and question tokens each form a graph.
//! Question nodes are aggregated into both visual graphs, and the two
//! visual graphs exchange information through the question graph, which
//! acts as a bridge. Pooled visual nodes feed one of three decoders:
//! open-ended classification, count regression or multiple-choice ranking.
//!
//! Parameters live in a [`ParamStore`] as plain buffers. Each forward pass
//! binds them into a fresh autodiff graph through [`Bound`], so passes over
//! different samples can run on different threads.

pub mod config;
pub mod data;
pub mod decoders;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod interactions;
pub mod io;
pub mod layers;
pub mod model;
pub mod optim;
pub mod parallel;
pub mod params;
pub mod training;

pub use config::{Ablation, AnswerSpace, ModelConfig, Precision, TaskKind, TrainConfig};
pub use data::{Answer, Dataset, QaSample, TokenSequence};
pub use error::{Error, ErrorClass, Result};
pub use model::{Model, Prediction};
pub use params::{Bound, ParamId, ParamStore};
pub use training::{evaluate, lr_schedule, Metric, TrainReport, Trainer};
