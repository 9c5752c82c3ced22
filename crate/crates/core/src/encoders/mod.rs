//! Surrogate modality encoders and their on-disk formats.
//!
//! * [`VolumeEncoder`]: pooled HU features, linear map, L2 normalization.
//! * [`ReportEncoder`]: negation-aware bag of template tokens, linear map,
//!   L2 normalization.
//! * [`RadiographEncoder`]: trainable patch network (per-patch embedding with
//!   ReLU, mean pool, two-layer MLP, L2 normalization).
//!
//! Every encoder exposes its tensors through [`Parameterized`] in a fixed
//! order; tape forwards take the matching [`NodeId`]s in that same order.

mod checkpoint;
mod radiograph;
mod report;
mod volume;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use radiograph::{image_patches, RadiographEncoder, StudentConfig};
pub use report::{ReportEncoder, Vocab};
pub use volume::{volume_features, VolumeEncoder, GRID, HIST_BINS, VOLUME_FEATURES};

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{write_atomic, ByteReader};
use crate::rng::SplitMix64;
use crate::tensor::{NodeId, Tape, Tensor};

pub const NORM_EPS: f64 = 1e-12;

const EMBEDDING_MAGIC: &[u8; 5] = b"X2EMB";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    /// CT volume.
    C,
    /// Report text.
    R,
    /// Radiograph.
    X,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub vector: Vec<f64>,
    pub modality: Modality,
    pub item_id: String,
}

/// A batch of embeddings stored as an `n x d` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub modality: Modality,
    pub ids: Vec<String>,
    pub vectors: Tensor,
}

impl EmbeddingSet {
    pub fn new(modality: Modality, ids: Vec<String>, vectors: Tensor) -> Result<Self> {
        let (n, _) = vectors.dims2("embedding set")?;
        if n != ids.len() {
            return Err(Error::Dimension {
                op: "embedding set",
                left: vectors.shape().to_vec(),
                right: vec![ids.len()],
            });
        }
        Ok(Self {
            modality,
            ids,
            vectors,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.shape()[1]
    }

    pub fn get(&self, i: usize) -> Embedding {
        Embedding {
            vector: self.vectors.row(i).to_vec(),
            modality: self.modality,
            item_id: self.ids[i].clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(EMBEDDING_MAGIC);
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        for (id, row) in self.ids.iter().zip(self.vectors.rows()) {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for v in row {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], modality: Modality) -> Result<Self> {
        let mut r = ByteReader::new("embedding", bytes);
        r.expect_magic(EMBEDDING_MAGIC)?;
        let count = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let mut ids = Vec::with_capacity(count);
        let mut data = Vec::with_capacity(count * dim);
        for _ in 0..count {
            let len = r.u16()? as usize;
            ids.push(r.string(len)?);
            for _ in 0..dim {
                data.push(f64::from(r.f32()?));
            }
        }
        r.finish()?;
        Self::new(modality, ids, Tensor::new(vec![count, dim], data)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path, modality: Modality) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, modality)
    }
}

/// Fully connected layer `y = x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and bias.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut SplitMix64) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = (0..fan_in * fan_out).map(|_| rng.uniform(-bound, bound)).collect();
        let bias = (0..fan_out).map(|_| rng.uniform(-bound, bound)).collect();
        Self {
            weight: Tensor::new(vec![fan_in, fan_out], weight).expect("sized"),
            bias: Tensor::vector(bias),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(tape: &mut Tape, weight: NodeId, bias: NodeId, x: NodeId) -> Result<NodeId> {
        let y = tape.matmul(x, weight)?;
        tape.add_row(y, bias)
    }
}

/// Ordered access to an encoder's named tensors.
pub trait Parameterized {
    fn named_params(&self) -> Vec<(String, &Tensor)>;
    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)>;

    /// Records every tensor on `tape`, trainable or constant.
    fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<NodeId> {
        self.named_params()
            .into_iter()
            .map(|(_, t)| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }

    fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            self.named_params()
                .into_iter()
                .map(|(n, t)| (n, t.clone()))
                .collect(),
        )
    }

    /// Overwrites this encoder's tensors from a checkpoint by name.
    fn load_from(&mut self, ckpt: &Checkpoint) -> Result<()> {
        for (name, slot) in self.named_params_mut() {
            let src = ckpt
                .get(&name)
                .ok_or_else(|| Error::format("checkpoint", format!("missing tensor {name}")))?;
            if src.shape() != slot.shape() {
                return Err(Error::Dimension {
                    op: "load checkpoint",
                    left: slot.shape().to_vec(),
                    right: src.shape().to_vec(),
                });
            }
            slot.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_file_round_trip_at_f32_precision() {
        let v = Tensor::from_rows(&[vec![0.6, 0.8], vec![1.0, 0.0]]).unwrap();
        let set = EmbeddingSet::new(Modality::X, vec!["a".into(), "case-1".into()], v).unwrap();
        let bytes = set.to_bytes();
        assert_eq!(&bytes[..5], b"X2EMB");
        let back = EmbeddingSet::from_bytes(&bytes, Modality::X).unwrap();
        assert_eq!(back.ids, set.ids);
        for (a, b) in back.vectors.data().iter().zip(set.vectors.data()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn linear_init_is_bounded_and_seeded() {
        let a = Linear::init(16, 4, &mut SplitMix64::new(1));
        let b = Linear::init(16, 4, &mut SplitMix64::new(1));
        assert_eq!(a, b);
        assert!(a.weight.data().iter().all(|w| w.abs() <= 0.25));
    }
}
