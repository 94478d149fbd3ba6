//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "ACTMAXCK"
//! version      u32
//! header_len   u64
//! header       header_len bytes of `key = value` text (spec, metadata, tensor shapes)
//! payload_len  u64
//! payload      payload_len bytes: f64 values of every tensor in declaration order
//! ```

use std::io;
use std::path::Path;

use thiserror::Error;

use crate::config::{join, ConfigError, RawConfig};
use crate::model::{Model, ModelParams, ModelSpec};
use crate::tensor::Tensor;
use crate::util::{fmt_f64, write_atomic};

pub const MAGIC: &[u8; 8] = b"ACTMAXCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O error at {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("checkpoint truncated: {0}")]
    Truncated(String),
    #[error("checkpoint corrupt: {0}")]
    Corrupt(String),
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
}

/// What training recorded about the run that produced the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub best_val_balanced_accuracy: f64,
}

impl Default for TrainingMetadata {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs_run: 0,
            best_epoch: 0,
            best_val_loss: f64::INFINITY,
            best_val_balanced_accuracy: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub meta: TrainingMetadata,
}

fn header(ck: &Checkpoint) -> RawConfig {
    let spec = &ck.model.spec;
    let mut h = RawConfig::default();
    h.insert("model.input_height", spec.input_height);
    h.insert("model.input_width", spec.input_width);
    h.insert("model.conv_filters", join(&spec.conv_filters));
    h.insert("model.pool_after", join(&spec.pool_after));
    h.insert("model.pool_kernels", join(&spec.pool_kernels));
    h.insert("model.pool_strides", join(&spec.pool_strides));
    h.insert("meta.seed", ck.meta.seed);
    h.insert("meta.epochs_run", ck.meta.epochs_run);
    h.insert("meta.best_epoch", ck.meta.best_epoch);
    h.insert("meta.best_val_loss", fmt_f64(ck.meta.best_val_loss));
    h.insert(
        "meta.best_val_balanced_accuracy",
        fmt_f64(ck.meta.best_val_balanced_accuracy),
    );
    for (name, t) in ck.model.params.tensor_names().iter().zip(ck.model.params.tensors()) {
        h.insert(format!("tensor.{name}"), join(t.shape()));
    }
    h
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let text = header(self).to_text();
        let tensors = self.model.params.tensors();
        let payload_len: usize = tensors.iter().map(|t| t.len() * 8).sum();
        let mut out = Vec::with_capacity(8 + 4 + 8 + text.len() + 8 + payload_len);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&(payload_len as u64).to_le_bytes());
        for t in tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(8, "magic")?;
        if magic != MAGIC {
            return Err(CheckpointError::Corrupt("bad magic bytes".into()));
        }
        let version = u32::from_le_bytes(cur.take(4, "version")?.try_into().unwrap());
        if version != VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: VERSION,
            });
        }
        let header_len = cur.u64("header length")?;
        let text = cur.take(header_len, "header")?;
        let text = std::str::from_utf8(text)
            .map_err(|_| CheckpointError::Corrupt("header is not UTF-8".into()))?;
        let (spec, meta, shapes) = parse_header(text)?;
        let payload_len = cur.u64("payload length")?;
        let expected_len: usize = shapes.iter().map(|s| s.iter().product::<usize>() * 8).sum();
        if payload_len != expected_len {
            return Err(CheckpointError::Corrupt(format!(
                "declared tensor shapes need {expected_len} payload bytes but {payload_len} are declared"
            )));
        }
        let payload = cur.take(payload_len, "payload")?;
        if cur.pos != bytes.len() {
            return Err(CheckpointError::Corrupt(format!(
                "{} trailing bytes after payload",
                bytes.len() - cur.pos
            )));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut tensors = Vec::with_capacity(shapes.len());
        for shape in shapes {
            let n = shape.iter().product();
            let data: Vec<f64> = values.by_ref().take(n).collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(CheckpointError::Corrupt("non-finite parameter value".into()));
            }
            tensors.push(Tensor::new(shape, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))?);
        }
        let params = ModelParams::from_tensors(&spec, tensors)
            .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        Ok(Self {
            model: Model { spec, params },
            meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        write_atomic(path, &self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(CheckpointError::Truncated(format!(
                "{what} needs {n} bytes at offset {} but the file has {}",
                self.pos,
                self.bytes.len()
            ))),
        }
    }

    fn u64(&mut self, what: &str) -> Result<usize, CheckpointError> {
        let v = u64::from_le_bytes(self.take(8, what)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| CheckpointError::Corrupt(format!("{what} {v} too large")))
    }
}

fn parse_header(
    text: &str,
) -> Result<(ModelSpec, TrainingMetadata, Vec<Vec<usize>>), CheckpointError> {
    let corrupt = |e: ConfigError| CheckpointError::Corrupt(format!("header: {e}"));
    let raw = RawConfig::parse(text).map_err(corrupt)?;
    let mut r = raw.reader();
    let list = |r: &mut crate::config::Reader<'_>, key: &str| -> Result<Vec<usize>, ConfigError> {
        r.list(key)?.ok_or_else(|| ConfigError::Missing(key.into()))
    };
    let spec = ModelSpec {
        input_height: r.req("model.input_height").map_err(corrupt)?,
        input_width: r.req("model.input_width").map_err(corrupt)?,
        conv_filters: list(&mut r, "model.conv_filters").map_err(corrupt)?,
        pool_after: list(&mut r, "model.pool_after").map_err(corrupt)?,
        pool_kernels: list(&mut r, "model.pool_kernels").map_err(corrupt)?,
        pool_strides: list(&mut r, "model.pool_strides").map_err(corrupt)?,
    };
    let meta = TrainingMetadata {
        seed: r.req("meta.seed").map_err(corrupt)?,
        epochs_run: r.req("meta.epochs_run").map_err(corrupt)?,
        best_epoch: r.req("meta.best_epoch").map_err(corrupt)?,
        best_val_loss: r.req("meta.best_val_loss").map_err(corrupt)?,
        best_val_balanced_accuracy: r.req("meta.best_val_balanced_accuracy").map_err(corrupt)?,
    };
    let names = ModelParams::expected_shapes(&spec)
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))
        .map(|s| s.len())?;
    let mut shapes = Vec::with_capacity(names);
    let name_list = {
        let mut v = Vec::new();
        for i in 1..=spec.num_layers() {
            v.push(format!("conv{i}.weight"));
            v.push(format!("conv{i}.bias"));
        }
        v.push("head.weight".to_string());
        v.push("head.bias".to_string());
        v
    };
    for name in name_list {
        shapes.push(list(&mut r, &format!("tensor.{name}")).map_err(corrupt)?);
    }
    r.finish().map_err(corrupt)?;
    Ok((spec, meta, shapes))
}
