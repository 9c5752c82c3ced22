use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{sha256_hex, write_atomic, ByteReader};
use crate::tensor::Tensor;

const MAGIC: &[u8; 6] = b"X2CKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Ordered table of named `f64` tensors.
///
/// Layout: magic `X2CKPT`, `u32` version, `u32` tensor count, then per
/// tensor `u16` name length, name bytes, `u32` rank, `rank x u32` dims and
/// the little-endian `f64` payload.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(tensors: Vec<(String, Tensor)>) -> Self {
        Self { tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn merged(mut self, other: Checkpoint) -> Self {
        self.tensors.extend(other.tensors);
        self
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for d in t.shape() {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            out.extend_from_slice(&t.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new("checkpoint", bytes);
        r.expect_magic(MAGIC)?;
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format("checkpoint", format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = r.string(len)?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            tensors.push((name, Tensor::new(shape, data)?));
        }
        r.finish()?;
        Ok(Self { tensors })
    }

    /// SHA-256 of the serialized bytes.
    pub fn hash(&self) -> String {
        sha256_hex(&self.to_bytes())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_round_trip_and_hash_is_stable() {
        let ckpt = Checkpoint::new(vec![
            ("a.w".into(), Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.5, 0.0]).unwrap()),
            ("a.b".into(), Tensor::vector(vec![0.25, f64::MIN_POSITIVE])),
        ]);
        let bytes = ckpt.to_bytes();
        assert_eq!(&bytes[..6], b"X2CKPT");
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.hash(), ckpt.hash());
        assert_eq!(ckpt.hash().len(), 64);
    }

    #[test]
    fn rejects_wrong_version() {
        let mut bytes = Checkpoint::default().to_bytes();
        bytes[6] = 9;
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
