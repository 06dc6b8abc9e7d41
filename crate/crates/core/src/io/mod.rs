//! Files: tensors, dataset manifests, checkpoints, trace dumps and the
//! synthetic dataset generator.

mod atomic;
pub mod checkpoint;
pub mod manifest;
pub mod synth;
pub mod tensor_file;
pub mod trace;

use std::path::PathBuf;

use thiserror::Error;

pub use atomic::write_atomic;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use manifest::{load_manifest, save_manifest};
pub use tensor_file::{read_tensor_file, write_tensor_file, AnyTensor};
pub use trace::{dump_interaction_trace, load_trace_dump, TraceDump};

/// Malformed binary containers.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: Vec<u8> },
    #[error("unsupported format version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u16, supported: u16 },
    #[error("unknown dtype code {0}")]
    UnknownDType(u8),
    #[error("dtype mismatch: expected {expected}, file holds {found}")]
    DTypeMismatch {
        expected: &'static str,
        found: &'static str,
    },
    #[error("truncated {what}: need {expected} bytes, have {actual}")]
    Truncated {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("dimension overflow in shape {0:?}")]
    Overflow(Vec<u64>),
    #[error("invalid header: {0}")]
    Header(String),
}

/// Invalid dataset content. Every variant names the offending sample when
/// one is involved.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("sample {sample}: missing file {path}")]
    MissingFile { sample: String, path: PathBuf },
    #[error("sample {sample}: {path}: {source}")]
    TensorFile {
        sample: String,
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error("sample {sample}: {what} has shape {found:?}, expected {expected:?}")]
    Shape {
        sample: String,
        what: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("sample {sample}: {what} has no tokens")]
    EmptyQuestion { sample: String, what: String },
    #[error("sample {sample}: {what}: {detail}")]
    BadEdge {
        sample: String,
        what: String,
        detail: String,
    },
    #[error("sample {sample}: {detail}")]
    BadAnswer { sample: String, detail: String },
    #[error("sample {sample}: {found} answer candidates, expected {expected}")]
    CandidateCount {
        sample: String,
        expected: usize,
        found: usize,
    },
    #[error("sample {sample}: token count {tokens} does not match {rows} embedding rows")]
    TokenCount {
        sample: String,
        tokens: usize,
        rows: usize,
    },
    #[error("trace dump: {0}")]
    Trace(String),
    #[error("duplicate sample id {0}")]
    DuplicateSample(String),
    #[error("unknown sample id {0}")]
    UnknownSample(String),
    #[error("dataset has no samples")]
    Empty,
}
