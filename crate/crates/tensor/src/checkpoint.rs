//! Binary parameter files.
//!
//! Layout (all integers `u32` little-endian):
//! magic `ATVC`, format version, parameter count, then per parameter:
//! name length, UTF-8 name bytes, rank, each dimension, and the raw
//! little-endian `f32` data.

use std::fs;
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ATVC";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + params.num_elements() * 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> std::result::Result<ParamStore, String> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err("bad magic".into());
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(format!("unsupported format version {version}"));
    }
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|e| format!("parameter name is not UTF-8: {e}"))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| format!("`{name}`: shape {shape:?} overflows"))?;
        let raw = r.take(numel.checked_mul(4).ok_or("size overflow")?)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = if rank == 0 {
            Tensor::scalar(data[0])
        } else {
            Tensor::from_vec(data, &shape).map_err(|e| format!("`{name}`: {e}"))?
        };
        if store.contains(&name) {
            return Err(format!("duplicate parameter `{name}`"));
        }
        store.insert(name, t);
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok(store)
}

pub fn write_checkpoint(path: &Path, params: &ParamStore) -> Result<()> {
    fs::write(path, encode_checkpoint(params)).map_err(|source| TensorError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_checkpoint(path: &Path) -> Result<ParamStore> {
    let bytes = fs::read(path).map_err(|source| TensorError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_checkpoint(&bytes).map_err(|msg| TensorError::Checkpoint {
        path: path.display().to_string(),
        msg,
    })
}
