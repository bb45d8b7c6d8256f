//! Portable binary checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! | field | encoding |
//! |---|---|
//! | magic | 8 bytes `FEATXCKP` |
//! | version | `u32` (currently 1) |
//! | vocabulary hash | `u32` length + UTF-8 bytes |
//! | architecture | `u32` length + UTF-8 JSON of [`ModelConfig`] |
//! | tensor count | `u32` |
//! | each tensor | `u32` name length + name, `u64` rows, `u64` cols, `rows·cols` `f64` values |
//!
//! Tensors appear in the order of [`ModelState::named_tensors`]: embeddings,
//! classifier layers, first-order weights, then propagation transforms.

use std::path::Path;

use super::config::ModelConfig;
use super::state::ModelState;
use crate::error::{Error, Result};
use crate::ndiff::Tensor;

const MAGIC: &[u8; 8] = b"FEATXCKP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub vocabulary_hash: String,
    pub state: ModelState,
}

fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(bytes);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::data("truncated checkpoint"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::data("checkpoint string is not UTF-8"))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_bytes(&mut out, self.vocabulary_hash.as_bytes());
        let arch = serde_json::to_string(&self.state.config).expect("config serializes");
        put_bytes(&mut out, arch.as_bytes());
        let tensors = self.state.named_tensors();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in &tensors {
            put_bytes(&mut out, name.as_bytes());
            out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
            for v in t.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::data("not a checkpoint file"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::data(format!("unsupported checkpoint version {version}")));
        }
        let vocabulary_hash = r.string()?;
        let config: ModelConfig = serde_json::from_str(&r.string()?)
            .map_err(|e| Error::data(format!("checkpoint architecture: {e}")))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::data("checkpoint tensor too large"))?;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::data("checkpoint tensor too large"))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((name, Tensor::from_vec(rows, cols, data)?));
        }
        if r.pos != buf.len() {
            return Err(Error::data("trailing bytes after checkpoint"));
        }
        Ok(Checkpoint {
            vocabulary_hash,
            state: ModelState::from_named_tensors(config, tensors)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }

    /// Fails unless the checkpoint was trained against the vocabulary with hash `expected`.
    pub fn verify_vocabulary(&self, expected: &str) -> Result<()> {
        if self.vocabulary_hash != expected {
            return Err(Error::data(format!(
                "vocabulary hash mismatch: checkpoint {} vs data {}",
                self.vocabulary_hash, expected
            )));
        }
        Ok(())
    }
}
