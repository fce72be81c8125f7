//! Binary tensor container.
//!
//! Layout: magic `SVQT`, u32 version (=1), u32 entry count, then per entry a
//! u16 name length + UTF-8 name, u8 dtype (0 = f32, 1 = f64), u32 rank,
//! rank x u64 dims, and the row-major payload. All integers and floats are
//! little-endian. Loading validates every length before touching payload
//! bytes and reports the byte offset of the first problem.

use crate::error::{Error, Result};
use crate::tensor::Tensor as GenericTensor;
use crate::util::atomic_write;
use crate::Tensor;
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"SVQT";
pub const VERSION: u32 = 1;

/// A named tensor at either storage precision.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredTensor {
    F32(GenericTensor<f32>),
    F64(Tensor),
}

impl StoredTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            Self::F32(t) => t.shape(),
            Self::F64(t) => t.shape(),
        }
    }

    fn dtype_code(&self) -> u8 {
        match self {
            Self::F32(_) => 0,
            Self::F64(_) => 1,
        }
    }

    /// The payload widened to f64 regardless of storage precision.
    pub fn to_f64(&self) -> Tensor {
        match self {
            Self::F32(t) => {
                Tensor::new(t.shape(), t.data().iter().map(|&v| v as f64).collect()).unwrap()
            }
            Self::F64(t) => t.clone(),
        }
    }
}

/// Serializes named tensors into the container format.
pub fn encode_tensors(entries: &[(String, StoredTensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(entries.len())
        .map_err(|_| Error::param("too many tensors for one file"))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, tensor) in entries {
        let name_bytes = name.as_bytes();
        let name_len = u16::try_from(name_bytes.len())
            .map_err(|_| Error::param(format!("tensor name '{name}' longer than 65535 bytes")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name_bytes);
        out.push(tensor.dtype_code());
        let shape = tensor.shape();
        let rank = u32::try_from(shape.len()).expect("rank fits u32");
        out.extend_from_slice(&rank.to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match tensor {
            StoredTensor::F32(t) => {
                for &v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            StoredTensor::F64(t) => {
                for &v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    Ok(out)
}

/// Writes the container atomically.
pub fn save_tensors(path: &Path, entries: &[(String, StoredTensor)]) -> Result<()> {
    atomic_write(path, &encode_tensors(entries)?)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or_else(|| {
            Error::format(self.pos, format!("{what}: length overflows"))
        })?;
        if end > self.bytes.len() {
            return Err(Error::format(
                self.pos,
                format!(
                    "{what}: needs {n} bytes but only {} remain (file truncated?)",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parses a container from memory.
pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<(String, StoredTensor)>> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}, expected \"SVQT\"")));
    }
    let ver_at = c.pos;
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::format(
            ver_at,
            format!("unsupported version {version}, expected {VERSION}"),
        ));
    }
    let count = c.u32("entry count")? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for e in 0..count {
        let ctx = format!("entry {e}");
        let name_len = c.u16(&format!("{ctx} name length"))? as usize;
        let name_at = c.pos;
        let name_bytes = c.take(name_len, &format!("{ctx} name"))?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| Error::format(name_at, format!("{ctx} name is not UTF-8")))?
            .to_string();
        let dtype_at = c.pos;
        let dtype = c.u8(&format!("{ctx} dtype"))?;
        if dtype > 1 {
            return Err(Error::format(
                dtype_at,
                format!("{ctx} has unknown dtype code {dtype}"),
            ));
        }
        let rank = c.u32(&format!("{ctx} rank"))? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        let mut elems: usize = 1;
        for d in 0..rank {
            let dim_at = c.pos;
            let dim = c.u64(&format!("{ctx} dim {d}"))?;
            let dim = usize::try_from(dim)
                .map_err(|_| Error::format(dim_at, format!("{ctx} dim {d} too large")))?;
            elems = elems
                .checked_mul(dim)
                .ok_or_else(|| Error::format(dim_at, format!("{ctx} element count overflows")))?;
            shape.push(dim);
        }
        let width = if dtype == 0 { 4 } else { 8 };
        let payload_len = elems
            .checked_mul(width)
            .ok_or_else(|| Error::format(c.pos, format!("{ctx} payload size overflows")))?;
        let payload = c.take(payload_len, &format!("{ctx} payload"))?;
        let tensor = if dtype == 0 {
            let data: Vec<f32> = payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            StoredTensor::F32(GenericTensor::new(&shape, data)?)
        } else {
            let data: Vec<f64> = payload
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            StoredTensor::F64(Tensor::new(&shape, data)?)
        };
        out.push((name, tensor));
    }
    if c.pos != bytes.len() {
        return Err(Error::format(
            c.pos,
            format!("{} trailing bytes after last entry", bytes.len() - c.pos),
        ));
    }
    Ok(out)
}

/// Reads a container file.
pub fn load_tensors(path: &Path) -> Result<Vec<(String, StoredTensor)>> {
    decode_tensors(&std::fs::read(path)?)
}
