//! `.vqtn` tensor files.
//!
//! Little-endian layout:
//!
//! ```text
//! offset  size        field
//! 0       4           magic "VQTN"
//! 4       2           format version (u16) = 1
//! 6       1           dtype code (u8), 0 = float32
//! 7       1           rank (u8), 0..=8
//! 8       8·rank      dims (u64 each)
//! ...     4·Πdims     float32 payload, row-major
//! ```
//!
//! A rank-0 file stores a single scalar. Trailing bytes are rejected.

use std::fs;
use std::path::Path;

use crate::error::{Result, VqError};
use crate::tensor::DenseTensor;

pub const TENSOR_MAGIC: &[u8; 4] = b"VQTN";
pub const TENSOR_VERSION: u16 = 1;
pub const MAX_RANK: usize = 8;
const DTYPE_F32: u8 = 0;

/// Bounds-checked little-endian cursor over an in-memory file.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                VqError::Format(format!(
                    "truncated: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.buf.len()
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn usize(&mut self, what: &str) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| VqError::Format(format!("{what} {v} does not fit in memory")))
    }

    pub(crate) fn finish(self) -> Result<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(VqError::Format(format!(
                "{} trailing bytes after payload",
                self.buf.len() - self.pos
            )))
        }
    }
}

pub(crate) fn read_shape(r: &mut ByteReader<'_>) -> Result<Vec<usize>> {
    let rank = r.u8()? as usize;
    if rank > MAX_RANK {
        return Err(VqError::Format(format!("rank {rank} exceeds {MAX_RANK}")));
    }
    let shape = (0..rank)
        .map(|_| r.usize("dimension"))
        .collect::<Result<Vec<_>>>()?;
    if shape.contains(&0) {
        return Err(VqError::Format(format!("zero-sized dimension in {shape:?}")));
    }
    Ok(shape)
}

pub(crate) fn write_shape(out: &mut Vec<u8>, shape: &[usize]) -> Result<()> {
    if shape.len() > MAX_RANK {
        return Err(VqError::Format(format!("rank {} exceeds {MAX_RANK}", shape.len())));
    }
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    Ok(())
}

pub fn encode_tensor(t: &DenseTensor) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + 8 * t.rank() + 4 * t.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    write_shape(&mut out, t.shape())?;
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<DenseTensor> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != TENSOR_MAGIC {
        return Err(VqError::Format("bad magic, expected VQTN".into()));
    }
    let version = r.u16()?;
    if version != TENSOR_VERSION {
        return Err(VqError::Format(format!("unsupported tensor version {version}")));
    }
    let dtype = r.u8()?;
    if dtype != DTYPE_F32 {
        return Err(VqError::Format(format!("unsupported dtype code {dtype}")));
    }
    let shape = read_shape(&mut r)?;
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| VqError::Format("element count overflows".into()))?;
    let payload = r.take(n.checked_mul(4).ok_or_else(|| VqError::Format("payload size overflows".into()))?)?;
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    r.finish()?;
    DenseTensor::new_finite(shape, data).map_err(|e| VqError::Format(e.to_string()))
}

/// Tags an I/O error with the path it concerns.
pub(crate) fn with_path(path: &Path) -> impl FnOnce(std::io::Error) -> VqError + '_ {
    move |e| VqError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(with_path(path))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(with_path(path))
}

pub fn write_tensor(path: impl AsRef<Path>, t: &DenseTensor) -> Result<()> {
    write_file(path.as_ref(), &encode_tensor(t)?)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<DenseTensor> {
    decode_tensor(&read_file(path.as_ref())?)
}
