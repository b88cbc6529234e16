//! Binary checkpoint container shared by every trained model.
//!
//! Layout: an 8-byte magic, a little-endian format version, a JSON header
//! (model kind, code version, free-form metadata, blob directory), then the
//! raw float32 blobs back to back. Writing is deterministic — the same model
//! produces the same bytes — and loading restores parameters exactly, so a
//! saved model re-evaluates bit-identically.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::error::{Classify, ErrorClass};
use crate::lang::LangTable;
use crate::nn::Mlp;

const MAGIC: &[u8; 8] = b"VICMODEL";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a model checkpoint (bad magic)")]
    Magic,
    #[error("unsupported checkpoint format version {0}")]
    Version(u32),
    #[error("checkpoint header is invalid: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint is truncated while reading blob {0:?}")]
    Truncated(String),
    #[error("checkpoint has trailing bytes after the last blob")]
    TrailingBytes,
    #[error("checkpoint is missing blob {0:?}")]
    MissingBlob(String),
    #[error("checkpoint is a {got:?} model, expected {expected:?}")]
    KindMismatch { expected: String, got: String },
    #[error("checkpoint metadata field {0:?} is missing or has the wrong type")]
    Meta(String),
    #[error("checkpoint payload is invalid: {0}")]
    Payload(String),
}

impl Classify for CheckpointError {
    fn class(&self) -> ErrorClass {
        match self {
            CheckpointError::Io(_) => ErrorClass::Runtime,
            _ => ErrorClass::Validation,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct BlobEntry {
    name: String,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    code_version: String,
    meta: serde_json::Map<String, Value>,
    blobs: Vec<BlobEntry>,
}

/// Accumulates metadata and blobs, then writes them as one checkpoint file.
pub struct CheckpointWriter {
    kind: String,
    meta: serde_json::Map<String, Value>,
    blobs: Vec<(String, Vec<f32>)>,
}

impl CheckpointWriter {
    pub fn new(kind: &str) -> CheckpointWriter {
        CheckpointWriter {
            kind: kind.to_string(),
            meta: serde_json::Map::new(),
            blobs: Vec::new(),
        }
    }

    pub fn set_meta(&mut self, key: &str, value: Value) {
        self.meta.insert(key.to_string(), value);
    }

    pub fn add_blob(&mut self, name: &str, data: Vec<f32>) {
        self.blobs.push((name.to_string(), data));
    }

    /// Records an MLP: its layer dims go into the metadata, its parameters
    /// into a blob of the same name.
    pub fn add_mlp(&mut self, name: &str, mlp: &Mlp) {
        self.set_meta(
            &format!("{name}_dims"),
            Value::Array(mlp.dims().iter().map(|&d| Value::from(d)).collect()),
        );
        self.add_blob(name, mlp.params_f32());
    }

    /// Records the frozen language table the model was trained with.
    pub fn add_lang_table(&mut self, table: &LangTable) {
        let (strings, data) = table.to_blob();
        self.set_meta("lang_dim", Value::from(table.dim()));
        self.set_meta(
            "lang_strings",
            Value::Array(strings.into_iter().map(Value::from).collect()),
        );
        self.add_blob("lang_table", data);
    }

    pub fn write(&self, path: &Path) -> Result<(), CheckpointError> {
        let header = Header {
            kind: self.kind.clone(),
            code_version: crate::CODE_VERSION.to_string(),
            meta: self.meta.clone(),
            blobs: self
                .blobs
                .iter()
                .map(|(name, data)| BlobEntry { name: name.clone(), len: data.len() })
                .collect(),
        };
        let header_bytes = serde_json::to_vec(&header)?;
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        file.write_all(MAGIC)?;
        file.write_all(&FORMAT_VERSION.to_le_bytes())?;
        file.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        file.write_all(&header_bytes)?;
        for (_, data) in &self.blobs {
            for &v in data {
                file.write_all(&v.to_le_bytes())?;
            }
        }
        file.flush()?;
        Ok(())
    }
}

/// A loaded checkpoint: header metadata plus named float32 blobs.
pub struct Checkpoint {
    pub kind: String,
    pub code_version: String,
    pub meta: serde_json::Map<String, Value>,
    blobs: BTreeMap<String, Vec<f32>>,
}

impl Checkpoint {
    pub fn read(path: &Path) -> Result<Checkpoint, CheckpointError> {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        file.read_exact(&mut magic).map_err(|_| CheckpointError::Magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::Magic);
        }
        let mut word = [0u8; 4];
        file.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let mut long = [0u8; 8];
        file.read_exact(&mut long)?;
        let header_len = u64::from_le_bytes(long) as usize;
        let mut header_bytes = vec![0u8; header_len];
        file.read_exact(&mut header_bytes)?;
        let header: Header = serde_json::from_slice(&header_bytes)?;

        let mut blobs = BTreeMap::new();
        for entry in &header.blobs {
            let mut bytes = vec![0u8; entry.len * 4];
            file.read_exact(&mut bytes)
                .map_err(|_| CheckpointError::Truncated(entry.name.clone()))?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            blobs.insert(entry.name.clone(), data);
        }
        let mut rest = Vec::new();
        file.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(CheckpointError::TrailingBytes);
        }
        Ok(Checkpoint {
            kind: header.kind,
            code_version: header.code_version,
            meta: header.meta,
            blobs,
        })
    }

    /// Fails unless the checkpoint holds the expected model kind.
    pub fn expect_kind(&self, expected: &str) -> Result<(), CheckpointError> {
        if self.kind != expected {
            return Err(CheckpointError::KindMismatch {
                expected: expected.to_string(),
                got: self.kind.clone(),
            });
        }
        Ok(())
    }

    pub fn blob(&self, name: &str) -> Result<&[f32], CheckpointError> {
        self.blobs
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| CheckpointError::MissingBlob(name.to_string()))
    }

    pub fn meta_value(&self, key: &str) -> Result<&Value, CheckpointError> {
        self.meta.get(key).ok_or_else(|| CheckpointError::Meta(key.to_string()))
    }

    pub fn meta_f64(&self, key: &str) -> Result<f64, CheckpointError> {
        self.meta_value(key)?
            .as_f64()
            .ok_or_else(|| CheckpointError::Meta(key.to_string()))
    }

    pub fn meta_usize(&self, key: &str) -> Result<usize, CheckpointError> {
        self.meta_value(key)?
            .as_u64()
            .map(|v| v as usize)
            .ok_or_else(|| CheckpointError::Meta(key.to_string()))
    }

    pub fn meta_str(&self, key: &str) -> Result<&str, CheckpointError> {
        self.meta_value(key)?
            .as_str()
            .ok_or_else(|| CheckpointError::Meta(key.to_string()))
    }

    /// Reconstructs an MLP recorded with [`CheckpointWriter::add_mlp`].
    pub fn mlp(&self, name: &str) -> Result<Mlp, CheckpointError> {
        let dims: Vec<usize> = self
            .meta_value(&format!("{name}_dims"))?
            .as_array()
            .ok_or_else(|| CheckpointError::Meta(format!("{name}_dims")))?
            .iter()
            .map(|v| v.as_u64().map(|d| d as usize))
            .collect::<Option<_>>()
            .ok_or_else(|| CheckpointError::Meta(format!("{name}_dims")))?;
        let mut mlp = Mlp::zeros(&dims).map_err(|e| CheckpointError::Payload(e.to_string()))?;
        mlp.set_params_f32(self.blob(name)?)
            .map_err(|e| CheckpointError::Payload(e.to_string()))?;
        Ok(mlp)
    }

    /// Reconstructs the language table recorded with
    /// [`CheckpointWriter::add_lang_table`].
    pub fn lang_table(&self) -> Result<LangTable, CheckpointError> {
        let dim = self.meta_usize("lang_dim")?;
        let strings: Vec<String> = self
            .meta_value("lang_strings")?
            .as_array()
            .ok_or_else(|| CheckpointError::Meta("lang_strings".to_string()))?
            .iter()
            .map(|v| v.as_str().map(str::to_string))
            .collect::<Option<_>>()
            .ok_or_else(|| CheckpointError::Meta("lang_strings".to_string()))?;
        LangTable::from_blob(&strings, dim, self.blob("lang_table")?)
            .map_err(|e| CheckpointError::Payload(e.to_string()))
    }
}
