//! Model checkpoints.
//!
//! Layout: magic `BTAC`, `u16` version, `u8` dtype code, `u64` header
//! length, a JSON header (configs, optimizer step, parameter names and
//! shapes), then little-endian payloads: every parameter value, every
//! first moment, every second moment, each in header order.

use std::path::Path;

use bta_tensor::{Scalar, TensorData};
use serde::{Deserialize, Serialize};

use super::tensor_file::{check_magic, read_dtype, read_values, read_version, take};
use super::{write_atomic, FormatError};
use crate::config::{ModelConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::optim::AdamState;

pub const MAGIC: [u8; 4] = *b"BTAC";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    epoch: usize,
    optimizer_step: u64,
    params: Vec<ParamEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Epochs completed when the snapshot was taken.
    pub epoch: usize,
    pub names: Vec<String>,
    pub values: Vec<TensorData<T>>,
    pub optimizer: AdamState<T>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn capture(model: &Model<T>, train: &TrainConfig, epoch: usize, optimizer: &AdamState<T>) -> Self {
        Self {
            model: model.config.clone(),
            train: train.clone(),
            epoch,
            names: model.params.names().map(str::to_string).collect(),
            values: model.params.iter().map(|(_, p)| p.value.clone()).collect(),
            optimizer: optimizer.clone(),
        }
    }

    /// Rebuilds the architecture from the stored config and loads the
    /// stored values, which must cover exactly its parameter set.
    pub fn restore(&self) -> Result<Model<T>> {
        let mut model = Model::new(self.model.clone(), 0)?;
        let expected: Vec<&str> = model.params.names().collect();
        if expected != self.names.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::ArchitectureMismatch(format!(
                "parameter names {:?} do not match the architecture's {:?}",
                self.names, expected
            )));
        }
        for ((id, _), value) in model.params.clone().iter().zip(&self.values) {
            model.params.set_value(id, value.clone())?;
        }
        Ok(model)
    }

    pub fn encode(&self) -> Vec<u8> {
        let header = Header {
            model: self.model.clone(),
            train: self.train.clone(),
            epoch: self.epoch,
            optimizer_step: self.optimizer.step,
            params: self
                .names
                .iter()
                .zip(&self.values)
                .map(|(name, v)| ParamEntry {
                    name: name.clone(),
                    shape: v.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(T::DTYPE.code());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for group in [&self.values, &self.optimizer.m, &self.optimizer.v] {
            for t in group {
                for &v in t.data() {
                    v.write_le(&mut out);
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut b = bytes;
        check_magic(&mut b, MAGIC)?;
        read_version(&mut b, VERSION)?;
        let dtype = read_dtype(&mut b)?;
        if dtype != T::DTYPE {
            return Err(FormatError::DTypeMismatch {
                expected: T::DTYPE.name(),
                found: dtype.name(),
            });
        }
        let len = u64::from_le_bytes(take(&mut b, 8, "header")?.try_into().expect("eight bytes"));
        let len = usize::try_from(len).map_err(|_| FormatError::Overflow(vec![len]))?;
        let header: Header =
            serde_json::from_slice(take(&mut b, len, "header")?).map_err(|e| FormatError::Header(e.to_string()))?;
        let mut group = |what| {
            header
                .params
                .iter()
                .map(|p| {
                    let n = p.shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
                    let n = n.ok_or_else(|| FormatError::Overflow(p.shape.iter().map(|&d| d as u64).collect()))?;
                    let data = read_values::<T>(&mut b, n, what)?;
                    Ok(TensorData::new(p.shape.clone(), data).expect("length checked"))
                })
                .collect::<Result<Vec<_>, FormatError>>()
        };
        let values = group("parameter payload")?;
        let m = group("optimizer payload")?;
        let v = group("optimizer payload")?;
        if !b.is_empty() {
            return Err(FormatError::TrailingBytes(b.len()));
        }
        Ok(Self {
            model: header.model,
            train: header.train,
            epoch: header.epoch,
            names: header.params.into_iter().map(|p| p.name).collect(),
            values,
            optimizer: AdamState {
                step: header.optimizer_step,
                m,
                v,
            },
        })
    }
}

pub fn save_checkpoint<T: Scalar>(checkpoint: &Checkpoint<T>, path: &Path) -> Result<()> {
    write_atomic(path, &checkpoint.encode())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Checkpoint::decode(&bytes)?)
}

/// Dtype stored in a checkpoint file, read from its fixed header.
pub fn checkpoint_dtype(path: &Path) -> Result<bta_tensor::DType> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut b = bytes.as_slice();
    check_magic(&mut b, MAGIC)?;
    read_version(&mut b, VERSION)?;
    Ok(read_dtype(&mut b)?)
}
