//! Versioned binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic          8 bytes  "PREPNETW"
//! version        u32
//! config_hash    u64
//! tensor_count   u32
//! per tensor:
//!   name_len     u32
//!   name         name_len bytes, UTF-8
//!   ndim         u32
//!   dims         ndim × u32
//!   data         prod(dims) × f32
//! digest         32 bytes, SHA-256 of everything above
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::network::PrepNet;
use crate::error::{Error, Result};
use crate::nn::{Component, Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"PREPNETW";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub format_version: u32,
    pub config_hash: u64,
    pub tensors: Vec<NamedTensor>,
}

impl ModelWeights {
    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.format_version.to_le_bytes());
        out.extend_from_slice(&self.config_hash.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());
        if bytes.len() < MAGIC.len() + 32 {
            return Err(corrupt("file too short"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if !body.starts_with(MAGIC) {
            return Err(corrupt("bad magic"));
        }
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch (truncated or modified file)"));
        }
        let mut r = Reader {
            buf: &body[MAGIC.len()..],
        };
        let format_version = r.u32()?;
        if format_version != FORMAT_VERSION {
            return Err(Error::IncompatibleCheckpoint(format!(
                "format version {format_version}, this build reads {FORMAT_VERSION}"
            )));
        }
        let config_hash = r.u64()?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| corrupt("tensor name is not UTF-8"))?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| corrupt("tensor size overflows"))?;
            let raw = r.take(len.checked_mul(4).ok_or_else(|| corrupt("tensor size overflows"))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
                .collect();
            tensors.push(NamedTensor { name, shape, data });
        }
        if !r.buf.is_empty() {
            return Err(corrupt("trailing bytes after last tensor"));
        }
        Ok(Self {
            format_version,
            config_hash,
            tensors,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::CorruptCheckpoint("unexpected end of data".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint(weights: &ModelWeights, path: &Path) -> Result<()> {
    let bytes = weights.to_bytes();
    // write-then-rename so a reader never observes a half-written file
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Read a checkpoint without checking it against a config.
pub fn read_checkpoint(path: &Path) -> Result<ModelWeights> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelWeights::from_bytes(&bytes)
}

/// Read a checkpoint and verify it was produced by `config`.
pub fn load_checkpoint(path: &Path, config: &ModelConfig) -> Result<ModelWeights> {
    let weights = read_checkpoint(path)?;
    let expected = config.config_hash();
    if weights.config_hash != expected {
        return Err(Error::IncompatibleCheckpoint(format!(
            "{} was written for config hash {:016x}, expected {expected:016x}",
            path.display(),
            weights.config_hash
        )));
    }
    Ok(weights)
}

impl<T: Scalar> PrepNet<T> {
    pub fn weights(&self) -> ModelWeights {
        ModelWeights {
            format_version: FORMAT_VERSION,
            config_hash: self.config().config_hash(),
            tensors: self
                .store
                .iter()
                .map(|(_, p)| NamedTensor {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    data: p.value.data().iter().map(|v| v.to_f64_lossy() as f32).collect(),
                })
                .collect(),
        }
    }

    /// Replace every parameter. Validation happens before any tensor is
    /// touched, so a failed load leaves the model unchanged.
    pub fn load_weights(&mut self, weights: &ModelWeights) -> Result<()> {
        if weights.config_hash != self.config().config_hash() {
            return Err(Error::IncompatibleCheckpoint("config hash mismatch".into()));
        }
        self.import_weights(weights, &Component::ALL)
    }

    /// Copy the tensors of `components` by name, e.g. externally trained
    /// encoder weights. Every targeted parameter must be present with a
    /// matching shape.
    pub fn import_weights(&mut self, weights: &ModelWeights, components: &[Component]) -> Result<()> {
        let mut staged = Vec::new();
        for (id, p) in self.store.iter() {
            if !components.contains(&p.component) {
                continue;
            }
            let t = weights
                .get(&p.name)
                .ok_or_else(|| Error::IncompatibleCheckpoint(format!("missing tensor {}", p.name)))?;
            if t.shape != p.value.shape() {
                return Err(Error::IncompatibleCheckpoint(format!(
                    "tensor {} has shape {:?}, model expects {:?}",
                    p.name,
                    t.shape,
                    p.value.shape()
                )));
            }
            let data = t.data.iter().map(|&v| T::from_f64_lossy(v as f64)).collect();
            staged.push((id, Tensor::from_vec(&t.shape, data)));
        }
        for (id, t) in staged {
            *self.store.value_mut(id) = t;
        }
        Ok(())
    }
}
