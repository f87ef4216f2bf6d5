//! The `STN1` binary tensor format.
//!
//! Layout: magic `STN1`, one dtype byte (0 = f32, 1 = f64, 2 = u8,
//! 3 = u16), one rank byte, `rank` little-endian u64 extents, then the
//! row-major little-endian payload.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{numel, Tensor};

pub const MAGIC: &[u8; 4] = b"STN1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    F64 = 1,
    U8 = 2,
    U16 = 3,
}

impl DType {
    fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            0 => Self::F32,
            1 => Self::F64,
            2 => Self::U8,
            3 => Self::U16,
            t => return Err(Error::Format(format!("unknown dtype tag {t}"))),
        })
    }

    pub fn size(self) -> usize {
        match self {
            Self::F32 => 4,
            Self::F64 => 8,
            Self::U8 => 1,
            Self::U16 => 2,
        }
    }
}

/// A decoded STN1 payload.
#[derive(Debug, Clone, PartialEq)]
pub enum StnArray {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
    U8 { shape: Vec<usize>, data: Vec<u8> },
    U16 { shape: Vec<usize>, data: Vec<u16> },
}

impl StnArray {
    pub fn shape(&self) -> &[usize] {
        match self {
            Self::F32(t) => t.shape(),
            Self::F64(t) => t.shape(),
            Self::U8 { shape, .. } | Self::U16 { shape, .. } => shape,
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            Self::F32(_) => DType::F32,
            Self::F64(_) => DType::F64,
            Self::U8 { .. } => DType::U8,
            Self::U16 { .. } => DType::U16,
        }
    }

    pub fn len(&self) -> usize {
        numel(self.shape())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let shape = self.shape();
        if shape.len() > u8::MAX as usize {
            return Err(Error::Format(format!("rank {} too large", shape.len())));
        }
        let mut out = Vec::with_capacity(6 + 8 * shape.len() + self.len() * self.dtype().size());
        out.extend_from_slice(MAGIC);
        out.push(self.dtype() as u8);
        out.push(shape.len() as u8);
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match self {
            Self::F32(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            Self::F64(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            Self::U8 { data, .. } => out.extend_from_slice(data),
            Self::U16 { data, .. } => data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| Error::Format("truncated header".into()))?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}")));
        }
        let mut hdr = [0u8; 2];
        r.read_exact(&mut hdr).map_err(|_| Error::Format("truncated header".into()))?;
        let dtype = DType::from_tag(hdr[0])?;
        let mut shape = Vec::with_capacity(hdr[1] as usize);
        for _ in 0..hdr[1] {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(|_| Error::Format("truncated extents".into()))?;
            let d = u64::from_le_bytes(b) as usize;
            if d == 0 {
                return Err(Error::Format("zero extent".into()));
            }
            shape.push(d);
        }
        let n = numel(&shape);
        if r.len() != n * dtype.size() {
            return Err(Error::Format(format!(
                "payload is {} bytes, expected {} for shape {shape:?}",
                r.len(),
                n * dtype.size()
            )));
        }
        Ok(match dtype {
            DType::F32 => Self::F32(Tensor::new(
                shape,
                r.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
            )?),
            DType::F64 => Self::F64(Tensor::new(
                shape,
                r.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
            )?),
            DType::U8 => Self::U8 { shape, data: r.to_vec() },
            DType::U16 => Self::U16 {
                shape,
                data: r.chunks_exact(2).map(|c| u16::from_le_bytes(c.try_into().unwrap())).collect(),
            },
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Float payloads converted to `f32`.
    pub fn into_f32(self) -> Result<Tensor<f32>> {
        match self {
            Self::F32(t) => Ok(t),
            Self::F64(t) => Ok(t.cast()),
            other => Err(Error::Format(format!("expected float tensor, found {:?}", other.dtype()))),
        }
    }

    /// Integer payloads widened to `u16` labels.
    pub fn into_labels(self) -> Result<(Vec<usize>, Vec<u16>)> {
        match self {
            Self::U8 { shape, data } => Ok((shape, data.into_iter().map(u16::from).collect())),
            Self::U16 { shape, data } => Ok((shape, data)),
            other => Err(Error::Format(format!("expected integer mask, found {:?}", other.dtype()))),
        }
    }
}
