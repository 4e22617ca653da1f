//! Binary parameter files.
//!
//! Layout, all integers little-endian `u32`: magic `JSPC`, version, record
//! count, then per record `name_len`, UTF-8 name, rank, dims, and the `f32`
//! values. Records whose name starts with `meta.` carry configuration rather
//! than parameters.

use std::path::Path;

use crate::error::{Error, Result};

use super::params::ParamStore;
use super::tensor::Tensor;

const MAGIC: &[u8; 4] = b"JSPC";
const VERSION: u32 = 1;
pub const META_PREFIX: &str = "meta.";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore<f32>,
    pub metadata: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn meta(&self, name: &str) -> Option<&Tensor<f32>> {
        self.metadata
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let count = self.metadata.len() + self.params.len();
        out.extend_from_slice(&(count as u32).to_le_bytes());
        let records = self.metadata.iter().map(|(n, t)| (n.as_str(), t)).chain(
            self.params
                .names()
                .iter()
                .map(String::as_str)
                .zip(self.params.tensors()),
        );
        for (name, t) in records {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&2u32.to_le_bytes());
            out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut params = ParamStore::new();
        let mut metadata = Vec::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let dims = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let (rows, cols) = match dims[..] {
                [] => (1, 1),
                [c] => (1, c),
                [rows, cols] => (rows, cols),
                _ => return Err(Error::Checkpoint(format!("`{name}` has rank {rank}"))),
            };
            let data = (0..rows * cols)
                .map(|_| {
                    r.take(4)
                        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                })
                .collect::<Result<Vec<_>>>()?;
            let t = Tensor::from_vec(rows, cols, data)?;
            if name.starts_with(META_PREFIX) {
                metadata.push((name, t));
            } else {
                params.add(name, t)?;
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Self { params, metadata })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
