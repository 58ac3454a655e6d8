//! Binary weight files.
//!
//! Layout (all integers little-endian):
//! `"YV13"`, `u32` version, `u32` tensor count, then per tensor a `u32`
//! name length, the UTF-8 name, a `u32` rank, `rank × u64` extents and
//! the `f64` payload.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"YV13";
const VERSION: u32 = 1;

/// Serializes named tensors.
pub fn write_weights(tensors: &[(String, Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::WeightFile {
            path: self.path.to_path_buf(),
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(self.err(format!("truncated while reading {what} at byte {}", self.pos)));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

/// Parses a weight file's bytes; `path` only labels errors.
pub fn read_weights(bytes: &[u8], path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4, "magic")? != MAGIC {
        return Err(r.err("bad magic (expected YV13)"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.err(format!("unsupported version {version}")));
    }
    let count = r.u32("tensor count")? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| r.err("tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let shape = (0..rank)
            .map(|_| r.u64("extent").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| r.err(format!("`{name}`: extents overflow")))?;
        let bytes = numel
            .checked_mul(8)
            .ok_or_else(|| r.err(format!("`{name}`: payload too large")))?;
        let payload = r.take(bytes, "payload")?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(r.err(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(out)
}

/// Every entry of the store, in registration order.
pub fn save_weights(store: &ParamStore, path: &Path) -> Result<()> {
    let tensors: Vec<(String, Tensor)> = store.entries().iter().map(|e| (e.name.clone(), e.value.clone())).collect();
    std::fs::write(path, write_weights(&tensors))?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<Vec<(String, Tensor)>> {
    read_weights(&std::fs::read(path)?, path)
}

/// Copies loaded tensors into the store. Every store entry must be present
/// with its exact shape; unknown names in the file are rejected too.
pub fn apply_weights(store: &mut ParamStore, tensors: Vec<(String, Tensor)>) -> Result<()> {
    if let Some(e) = store.entries().iter().find(|e| !tensors.iter().any(|(n, _)| n == &e.name)) {
        return Err(Error::MissingWeight(e.name.clone()));
    }
    for (name, t) in tensors {
        if store.find(&name).is_none() {
            return Err(Error::invalid("load weights", format!("file has unknown tensor `{name}`")));
        }
        store.set(&name, t)?;
    }
    Ok(())
}
