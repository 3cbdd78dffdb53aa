//! `CRVT` checkpoints.
//!
//! Layout (little-endian): `"CRVT"`, u32 version, 32-byte manifest hash, then
//! until end of file one record per tensor: u32 name length, UTF-8 name, u32
//! rank, rank × u64 dims, f32 payload. Run position and seed travel as
//! `meta.*` tensors.

use std::fs;
use std::path::Path;

use crate::cae::features::Reader;
use crate::error::{Error, Result};
use crate::nn::Tensor;

const MAGIC: &[u8; 4] = b"CRVT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest_hash: [u8; 32],
    pub tensors: Vec<(String, Tensor)>,
}

/// Splits a u64 into four u16 chunks, each exact in f32.
pub fn u64_to_meta(v: u64) -> Tensor {
    let data = (0..4).map(|i| ((v >> (16 * i)) & 0xffff) as f32).collect();
    Tensor::new(vec![4], data).expect("4 values")
}

pub fn meta_to_u64(t: &Tensor) -> Result<u64> {
    if t.len() != 4 || t.data().iter().any(|v| v.fract() != 0.0 || !(0.0..65536.0).contains(v)) {
        return Err(Error::input("malformed 64-bit meta tensor"));
    }
    Ok(t.data().iter().enumerate().fold(0u64, |acc, (i, &v)| acc | ((v as u64) << (16 * i))))
}

impl Checkpoint {
    pub fn new(manifest_hash: [u8; 32]) -> Self {
        Self {
            manifest_hash,
            tensors: vec![],
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn set_meta(&mut self, key: &str, v: u64) {
        self.push(format!("meta.{key}"), u64_to_meta(v));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn meta(&self, key: &str) -> Result<u64> {
        let t = self
            .get(&format!("meta.{key}"))
            .ok_or_else(|| Error::input(format!("checkpoint lacks meta.{key}")))?;
        meta_to_u64(t)
    }

    /// Tensors whose names start with `prefix`, in file order.
    pub fn with_prefix(&self, prefix: &str) -> Vec<(String, Tensor)> {
        self.tensors
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .cloned()
            .collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.manifest_hash);
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&t.to_le_f32_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Parse {
                offset: 0,
                message: "missing CRVT magic".into(),
            });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::UnsupportedFormat(format!("CRVT version {version}")));
        }
        let manifest_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let mut tensors = vec![];
        while !r.is_done() {
            let len = r.u32()? as usize;
            let at = r.pos;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Parse {
                    offset: at,
                    message: "tensor name is not UTF-8".into(),
                })?
                .to_string();
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let count = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|c| c.checked_mul(4).is_some_and(|b| b <= bytes.len()))
                .ok_or_else(|| r.err("tensor size exceeds file length"))?;
            let data = r
                .take(count * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        Ok(Self {
            manifest_hash,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
