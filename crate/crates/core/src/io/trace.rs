//! JSON dumps of interaction matrices for external inspection.

use std::path::Path;

use bta_tensor::{Scalar, TensorData};
use serde::{Deserialize, Serialize};

use super::{write_atomic, DataError};
use crate::data::QaSample;
use crate::error::{Error, Result};
use crate::graph::GraphBundle;
use crate::interactions::InteractionTrace;

/// One matrix with per-row argmax and maximum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixDump {
    pub name: String,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
    /// Column of the first maximum of each row.
    pub row_argmax: Vec<usize>,
    pub row_max: Vec<f64>,
}

impl MatrixDump {
    pub fn new<T: Scalar>(name: &str, m: &TensorData<T>, row_labels: Vec<String>, col_labels: Vec<String>) -> Self {
        let values: Vec<Vec<f64>> = m.rows().into_iter().map(|r| r.iter().map(|v| v.as_f64()).collect()).collect();
        let (row_argmax, row_max) = values
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
            })
            .unzip();
        Self {
            name: name.to_string(),
            row_labels,
            col_labels,
            values,
            row_argmax,
            row_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceDump {
    pub sample_id: String,
    pub tokens: Vec<String>,
    pub frame_labels: Vec<String>,
    pub clip_labels: Vec<String>,
    pub interactions: Vec<MatrixDump>,
    pub graphs: Vec<MatrixDump>,
}

impl TraceDump {
    pub fn new<T: Scalar>(
        sample: &QaSample<T>,
        frames_per_clip: usize,
        trace: &InteractionTrace<T>,
        graphs: &GraphBundle<T>,
    ) -> Self {
        let frames = sample.appearance.shape()[0];
        let clips = sample.motion.shape()[0];
        let fpc = frames_per_clip.max(1);
        let frame_labels: Vec<String> = (0..frames).map(|i| format!("clip{}/frame{}", i / fpc, i % fpc)).collect();
        let clip_labels: Vec<String> = (0..clips).map(|i| format!("clip{i}")).collect();
        let tokens = sample.question.tokens.clone();
        let labels = |name: &str| -> (Vec<String>, Vec<String>) {
            match name {
                "S_v" | "S_b_v" => (frame_labels.clone(), tokens.clone()),
                "S_m" | "S_b_m" => (clip_labels.clone(), tokens.clone()),
                "bridge_m" => (tokens.clone(), clip_labels.clone()),
                "bridge_v" => (tokens.clone(), frame_labels.clone()),
                "S_wob_v" => (frame_labels.clone(), clip_labels.clone()),
                "S_wob_m" => (clip_labels.clone(), frame_labels.clone()),
                "W_v" => (frame_labels.clone(), frame_labels.clone()),
                "W_m" => (clip_labels.clone(), clip_labels.clone()),
                _ => (tokens.clone(), tokens.clone()),
            }
        };
        let dump = |name: &str, m: &TensorData<T>| {
            let (r, c) = labels(name);
            MatrixDump::new(name, m, r, c)
        };
        let interactions = trace.matrices().into_iter().map(|(n, m)| dump(n, m)).collect();
        let mut graph_list = Vec::new();
        if let Some(w) = &graphs.w_v {
            graph_list.push(dump("W_v", w));
        }
        if let Some(w) = &graphs.w_m {
            graph_list.push(dump("W_m", w));
        }
        graph_list.push(dump("W_q", &graphs.w_q));
        Self {
            sample_id: sample.id.clone(),
            tokens,
            frame_labels,
            clip_labels,
            interactions,
            graphs: graph_list,
        }
    }
}

pub fn dump_interaction_trace(dump: &TraceDump, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(dump).expect("trace serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn load_trace_dump(path: &Path) -> Result<TraceDump> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| DataError::Trace(format!("{}: {e}", path.display())).into())
}
