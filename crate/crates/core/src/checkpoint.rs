//! Versioned binary checkpoint: a config echo plus named f64 tensors.
//!
//! Layout (little-endian): magic `RDCK`, `u16` version, `u8` kind, `u8` stage,
//! `u32` config length and UTF-8 `key=value` text, `u32` tensor count, then per
//! tensor a `u16` name length, the name, a `u8` rank, `u32` dims and the data.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::autodiff::ParamMap;
use crate::config::{parse_pairs, render_pairs};
use crate::error::{RdcError, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"RDCK";
pub const VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointKind {
    Codec = 0,
    Proxy = 1,
    Probe = 2,
}

impl CheckpointKind {
    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::Codec),
            1 => Some(Self::Proxy),
            2 => Some(Self::Probe),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub stage: u8,
    pub config: Vec<(String, String)>,
    pub tensors: ParamMap,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.kind as u8);
        out.push(self.stage);
        let text = render_pairs(&self.config);
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(RdcError::Version("not a checkpoint file".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(RdcError::Version(format!("checkpoint version {version}, expected {VERSION}")));
        }
        let kind = CheckpointKind::from_code(r.u8()?)
            .ok_or_else(|| RdcError::Version("unknown checkpoint kind".into()))?;
        let stage = r.u8()?;
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?).map_err(|_| r.corrupt("config is not UTF-8"))?;
        let config = parse_pairs(text)?;
        let count = r.u32()? as usize;
        let mut tensors = ParamMap::new();
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| r.corrupt("tensor name is not UTF-8"))?
                .to_string();
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.insert(name, Tensor::new(&shape, data));
        }
        if r.pos != bytes.len() {
            return Err(r.corrupt("trailing bytes"));
        }
        Ok(Self {
            kind,
            stage,
            config,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Fails unless the checkpoint holds the expected kind.
    pub fn expect_kind(self, kind: CheckpointKind) -> Result<Self> {
        if self.kind != kind {
            return Err(RdcError::Version(format!("expected a {kind:?} checkpoint, found {:?}", self.kind)));
        }
        Ok(self)
    }
}

/// SHA-256 over tensor names, shapes and bit patterns, in name order.
pub fn param_digest(params: &ParamMap) -> [u8; 32] {
    let mut h = Sha256::new();
    for (name, t) in params {
        h.update(name.as_bytes());
        for &d in t.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for v in t.data() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    h.finalize().into()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, reason: &str) -> RdcError {
        RdcError::Corrupt {
            offset: self.pos,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.corrupt("truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
