//! `FLDC` tensor container.
//!
//! Layout (little-endian): magic `FLDC`, u32 version, u32 tensor count,
//! u16 reserved, then per tensor a u16 name length, the UTF-8 name, a u8
//! rank, the dims as u32 and the values as f64 in row-major order.

use std::collections::HashSet;
use std::path::Path;

use flashdiff_core::numerics::Tensor;
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"FLDC";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 14;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error("bad magic {found:?} at byte offset 0")]
    BadMagic { found: Vec<u8> },

    #[error("unsupported version {version} at byte offset 4")]
    BadVersion { version: u32 },

    #[error("nonzero reserved field {value} at byte offset 12")]
    BadReserved { value: u16 },

    #[error("truncated at byte offset {offset}: need {needed} more bytes for {what}, {available} left")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
        what: &'static str,
    },

    #[error("tensor name at byte offset {offset} is not valid UTF-8")]
    BadName { offset: usize },

    #[error("duplicate tensor name {name:?} at byte offset {offset}")]
    Duplicate { name: String, offset: usize },

    #[error("{count} trailing bytes after the last tensor at byte offset {offset}")]
    Trailing { offset: usize, count: usize },

    #[error("tensor {name:?} cannot be stored: {reason}")]
    Unencodable { name: String, reason: String },

    #[error("checkpoint has no tensor named {0:?}")]
    Missing(String),

    #[error("tensor {name:?} has shape {actual:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
}

/// Ordered list of named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, CheckpointError> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| CheckpointError::Missing(name.to_string()))
    }

    pub fn get_shaped(&self, name: &str, shape: &[usize]) -> Result<&Tensor, CheckpointError> {
        let t = self.get(name)?;
        if t.shape() != shape {
            return Err(CheckpointError::Shape {
                name: name.to_string(),
                expected: shape.to_vec(),
                actual: t.shape().to_vec(),
            });
        }
        Ok(t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CheckpointError> {
        let count = u32::try_from(self.tensors.len()).map_err(|_| CheckpointError::Unencodable {
            name: String::new(),
            reason: "more than u32::MAX tensors".into(),
        })?;
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(HEADER_LEN);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&count.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        for (name, tensor) in &self.tensors {
            let bad = |reason: &str| CheckpointError::Unencodable {
                name: name.clone(),
                reason: reason.to_string(),
            };
            if !seen.insert(name.as_str()) {
                return Err(CheckpointError::Duplicate {
                    name: name.clone(),
                    offset: out.len(),
                });
            }
            let name_len = u16::try_from(name.len()).map_err(|_| bad("name longer than 65535 bytes"))?;
            let ndim = u8::try_from(tensor.shape().len()).map_err(|_| bad("more than 255 dimensions"))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(ndim);
            for &d in tensor.shape() {
                let d = u32::try_from(d).map_err(|_| bad("dimension exceeds u32"))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            out.reserve(tensor.len() * 8);
            for v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic { found: magic.to_vec() });
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(CheckpointError::BadVersion { version });
        }
        let count = r.u32("tensor count")? as usize;
        let reserved = r.u16("reserved field")?;
        if reserved != 0 {
            return Err(CheckpointError::BadReserved { value: reserved });
        }
        let mut seen = HashSet::new();
        let mut tensors = Vec::new();
        for _ in 0..count {
            let start = r.pos;
            let name_len = r.u16("name length")? as usize;
            let name_offset = r.pos;
            let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
                .map_err(|_| CheckpointError::BadName { offset: name_offset })?
                .to_string();
            if !seen.insert(name.clone()) {
                return Err(CheckpointError::Duplicate { name, offset: start });
            }
            let ndim = r.take(1, "rank")?[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32("dimension")? as usize);
            }
            let values_offset = r.pos;
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(8))
                .ok_or(CheckpointError::Truncated {
                    offset: values_offset,
                    needed: usize::MAX,
                    available: r.remaining(),
                    what: "tensor values",
                })?;
            let raw = r.take(n, "tensor values")?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let tensor = Tensor::new(shape, data).map_err(|e| CheckpointError::Unencodable {
                name: name.clone(),
                reason: e.to_string(),
            })?;
            tensors.push((name, tensor));
        }
        if r.remaining() != 0 {
            return Err(CheckpointError::Trailing {
                offset: r.pos,
                count: r.remaining(),
            });
        }
        Ok(Self { tensors })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        if n > self.remaining() {
            return Err(CheckpointError::Truncated {
                offset: self.pos,
                needed: n,
                available: self.remaining(),
                what,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    let bytes = ckpt.to_bytes()?;
    std::fs::write(path, bytes).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Checkpoint::from_bytes(&bytes)
}
