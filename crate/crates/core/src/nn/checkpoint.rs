//! Flat binary archive of named tensors with a JSON header.
//!
//! ```text
//! magic      8 bytes  "RSEGCKPT"
//! header_len u64 LE
//! header     UTF-8 JSON {format_version, arch_fingerprint, architecture, meta}
//! count      u64 LE
//! count x entry:
//!   name_len u64 LE, name UTF-8
//!   ndim     u64 LE, ndim x extent u64 LE
//!   payload  prod(extents) x f64 LE
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::module::{Module, Slot};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::fsutil::{json_sha256, write_atomic};

pub const MAGIC: &[u8; 8] = b"RSEGCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub arch_fingerprint: String,
    pub architecture: serde_json::Value,
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new<A: Serialize>(
        architecture: &A,
        meta: serde_json::Value,
        tensors: Vec<(String, Tensor)>,
    ) -> Self {
        let architecture = serde_json::to_value(architecture).expect("serializable architecture");
        Self {
            header: CheckpointHeader {
                format_version: FORMAT_VERSION,
                arch_fingerprint: json_sha256(&architecture),
                architecture,
                meta,
            },
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("serializable header");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u64).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u64).to_le_bytes());
            for &e in t.shape() {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(8)? != MAGIC {
            return Err(Error::format(path, "bad checkpoint magic"));
        }
        let hlen = r.u64()? as usize;
        let header: CheckpointHeader =
            serde_json::from_slice(r.take(hlen)?).map_err(|e| Error::json(path, e))?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported checkpoint version {}", header.format_version),
            ));
        }
        if json_sha256(&header.architecture) != header.arch_fingerprint {
            return Err(Error::format(path, "architecture fingerprint mismatch"));
        }
        let count = r.u64()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let nlen = r.u64()? as usize;
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| Error::format(path, "tensor name is not UTF-8"))?
                .to_string();
            let ndim = r.u64()? as usize;
            if ndim > 8 {
                return Err(Error::format(path, format!("{name}: rank {ndim} too large")));
            }
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &b| a.checked_mul(b))
                .ok_or_else(|| Error::format(path, format!("{name}: extent overflow")))?;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::format(path, "size overflow"))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((name, Tensor::from_vec(&shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::format(path, "trailing bytes after last tensor"));
        }
        Ok(Self { header, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Decodes the architecture description stored in the header.
    pub fn architecture<A: serde::de::DeserializeOwned>(&self) -> Result<A> {
        serde_json::from_value(self.header.architecture.clone())
            .map_err(|e| Error::Validation(format!("checkpoint architecture: {e}")))
    }

    /// Copies every tensor into the module by name. Every slot of the module
    /// must be present with a matching shape.
    pub fn apply_to<M: Module + ?Sized>(&self, model: &mut M) -> Result<()> {
        let map: BTreeMap<&str, &Tensor> =
            self.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let mut err = None;
        let mut seen = 0;
        model.visit("", &mut |name, slot| {
            if err.is_some() {
                return;
            }
            let dst = match slot {
                Slot::Param(p) => &mut p.value,
                Slot::Buffer(b) => b,
            };
            match map.get(name) {
                Some(t) if t.shape() == dst.shape() => {
                    *dst = (*t).clone();
                    seen += 1;
                }
                Some(t) => {
                    err = Some(Error::Validation(format!(
                        "checkpoint tensor {name} has shape {:?}, model expects {:?}",
                        t.shape(),
                        dst.shape()
                    )))
                }
                None => err = Some(Error::Validation(format!("checkpoint lacks tensor {name}"))),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if seen != map.len() {
            return Err(Error::Validation(format!(
                "checkpoint has {} tensors, model uses {}",
                map.len(),
                seen
            )));
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(self.path, "truncated checkpoint"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
