//! Feature matrices and their `CRVF` binary encoding.
//!
//! Layout (little-endian): `"CRVF"`, u32 version, u64 n, u64 d, `n*d` f32
//! values row-major, then `n` ids each as u32 byte length + UTF-8. An optional
//! trailer `"MHSH"` + 32 bytes records the manifest hash of the producing run.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CRVF";
const VERSION: u32 = 1;
const HASH_TAG: &[u8; 4] = b"MHSH";

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    ids: Vec<String>,
    d: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(ids: Vec<String>, d: usize, data: Vec<f32>) -> Result<Self> {
        if ids.is_empty() || d == 0 {
            return Err(Error::input("feature matrix needs n >= 1 and d >= 1"));
        }
        if data.len() != ids.len() * d {
            return Err(Error::input(format!(
                "{} ids x {d} dims needs {} values, got {}",
                ids.len(),
                ids.len() * d,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite feature in row `{}`",
                ids[i / d]
            )));
        }
        Ok(Self { ids, d, data })
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut ids = Vec::with_capacity(indices.len());
        let mut data = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            if i >= self.n() {
                return Err(Error::input(format!("row {i} out of range for {} rows", self.n())));
            }
            ids.push(self.ids[i].clone());
            data.extend_from_slice(self.row(i));
        }
        Self::new(ids, self.d, data)
    }

    pub fn encode(&self, manifest_hash: Option<&[u8; 32]>) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.n() as u64).to_le_bytes());
        out.extend_from_slice(&(self.d as u64).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for id in &self.ids {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        if let Some(h) = manifest_hash {
            out.extend_from_slice(HASH_TAG);
            out.extend_from_slice(h);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<(Self, Option<[u8; 32]>)> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Parse {
                offset: 0,
                message: "missing CRVF magic".into(),
            });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::UnsupportedFormat(format!("CRVF version {version}")));
        }
        let n = r.u64()? as usize;
        let d = r.u64()? as usize;
        let count = n
            .checked_mul(d)
            .filter(|c| c.checked_mul(4).is_some_and(|b| b <= bytes.len()))
            .ok_or_else(|| r.err("matrix size exceeds file length"))?;
        let data = r
            .take(count * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            let len = r.u32()? as usize;
            let at = r.pos;
            let s = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Parse {
                offset: at,
                message: "id is not UTF-8".into(),
            })?;
            ids.push(s.to_string());
        }
        let hash = if r.pos == bytes.len() {
            None
        } else {
            if r.take(4)? != HASH_TAG {
                return Err(r.err("unexpected trailing bytes"));
            }
            let h: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
            if r.pos != bytes.len() {
                return Err(r.err("unexpected trailing bytes"));
            }
            Some(h)
        };
        Ok((Self::new(ids, d, data)?, hash))
    }

    pub fn save(&self, path: &Path, manifest_hash: Option<&[u8; 32]>) -> Result<()> {
        fs::write(path, self.encode(manifest_hash)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(Self, Option<[u8; 32]>)> {
        Self::decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn err(&self, message: &str) -> Error {
        Error::Parse {
            offset: self.pos,
            message: message.into(),
        }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse {
                offset: self.bytes.len(),
                message: format!("truncated: need {n} more bytes at {}", self.pos),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn is_done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let m = FeatureMatrix::new(vec!["a".into()], 2, vec![1.0, -2.0]).unwrap();
        let b = m.encode(None);
        assert_eq!(&b[..4], b"CRVF");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(b[8..16].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(b[16..24].try_into().unwrap()), 2);
        assert_eq!(f32::from_le_bytes(b[28..32].try_into().unwrap()), -2.0);
        assert_eq!(&b[32..], &[1, 0, 0, 0, b'a']);
    }

    #[test]
    fn rejects_nan_and_truncation() {
        assert!(matches!(
            FeatureMatrix::new(vec!["a".into()], 1, vec![f32::NAN]),
            Err(Error::Numerical(_))
        ));
        let m = FeatureMatrix::new(vec!["a".into(), "b".into()], 1, vec![1.0, 2.0]).unwrap();
        let b = m.encode(None);
        assert!(matches!(FeatureMatrix::decode(&b[..b.len() - 1]), Err(Error::Parse { .. })));
    }

    proptest! {
        #[test]
        fn round_trip(n in 1usize..6, d in 1usize..5, seed in any::<u32>(), hashed in prop::bool::ANY) {
            let ids: Vec<String> = (0..n).map(|i| format!("id-{i}-é")).collect();
            let data: Vec<f32> = (0..n * d).map(|i| (seed as f32).sin() * i as f32).collect();
            let m = FeatureMatrix::new(ids, d, data).unwrap();
            let h = hashed.then_some([7u8; 32]);
            let (back, hash) = FeatureMatrix::decode(&m.encode(h.as_ref())).unwrap();
            prop_assert_eq!(back, m);
            prop_assert_eq!(hash, h);
        }
    }
}
