//! Multi-tensor archive used for warp caches and checkpoints.
//!
//! Layout (all integers little-endian): magic `BRTC`, u32 tensor count, then
//! per tensor: u32 name length, UTF-8 name, u8 dtype (0 = f32, 1 = u32),
//! u32 rank, u32 dims, raw element bytes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"BRTC";

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U32(Vec<u32>),
}

impl TensorData {
    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U32(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorArchive {
    tensors: Vec<Tensor>,
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: TensorData) -> Result<()> {
        let name = name.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::dims(shape.iter().product::<usize>(), data.len()));
        }
        if self.tensors.iter().any(|t| t.name == name) {
            return Err(Error::invalid(format!("duplicate tensor name {name}")));
        }
        self.tensors.push(Tensor { name, shape, data });
        Ok(())
    }

    pub fn push_f32(&mut self, name: impl Into<String>, data: &[f32]) -> Result<()> {
        self.push(name, vec![data.len()], TensorData::F32(data.to_vec()))
    }

    pub fn push_u32(&mut self, name: impl Into<String>, data: &[u32]) -> Result<()> {
        self.push(name, vec![data.len()], TensorData::U32(data.to_vec()))
    }

    fn find(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Format(format!("tensor {name} not found")))
    }

    pub fn f32(&self, name: &str) -> Result<&[f32]> {
        match &self.find(name)?.data {
            TensorData::F32(v) => Ok(v),
            TensorData::U32(_) => Err(Error::Format(format!("tensor {name} is not f32"))),
        }
    }

    pub fn u32(&self, name: &str) -> Result<&[u32]> {
        match &self.find(name)?.data {
            TensorData::U32(v) => Ok(v),
            TensorData::F32(_) => Err(Error::Format(format!("tensor {name} is not u32"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            let dtype = match t.data {
                TensorData::F32(_) => 0u8,
                TensorData::U32(_) => 1u8,
            };
            out.push(dtype);
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            match &t.data {
                TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::Format("missing BRTC magic".into()));
        }
        let count = cur.u32()? as usize;
        let mut archive = TensorArchive::new();
        for _ in 0..count {
            let name_len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(name_len)?)
                .map_err(|e| Error::Format(format!("tensor name: {e}")))?
                .to_string();
            let dtype = cur.take(1)?[0];
            let rank = cur.u32()? as usize;
            let shape = (0..rank).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = cur.take(n.checked_mul(4).ok_or_else(|| Error::Format("size overflow".into()))?)?;
            let words = raw.chunks_exact(4).map(|b| [b[0], b[1], b[2], b[3]]);
            let data = match dtype {
                0 => TensorData::F32(words.map(f32::from_le_bytes).collect()),
                1 => TensorData::U32(words.map(u32::from_le_bytes).collect()),
                other => return Err(Error::Format(format!("unknown dtype {other}"))),
            };
            archive.push(name, shape, data)?;
        }
        if cur.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after last tensor".into()));
        }
        Ok(archive)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("unexpected end of archive".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
