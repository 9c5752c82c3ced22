use super::{EmbeddingSet, Linear, Modality, Parameterized, NORM_EPS};
use crate::error::{Error, Result};
use crate::phantom::Volume;
use crate::rng::SplitMix64;
use crate::tensor::{NodeId, Tape, Tensor};

/// Blocks per axis of the pooling grid.
pub const GRID: usize = 4;
pub const HIST_BINS: usize = 16;
/// Histogram range start and bin width in HU; values outside are clamped
/// into the first / last bin.
pub const HIST_START_HU: f64 = -1024.0;
pub const HIST_BIN_HU: f64 = 128.0;
pub const VOLUME_FEATURES: usize = GRID * GRID * GRID + HIST_BINS;

/// 64 block means (HU / 1000, x-fastest block order) followed by the
/// 16-bin HU histogram normalized to sum 1.
///
/// Axes not divisible by 4 are padded by edge replication: block `g` covers
/// padded indices `[g * b, (g + 1) * b)` with `b = ceil(n / 4)`, and padded
/// index `i` reads voxel `min(i, n - 1)`.
pub fn volume_features(volume: &Volume) -> Result<Vec<f64>> {
    let dims = volume.dims();
    if dims.iter().any(|&d| d < 2) {
        return Err(Error::Dimension {
            op: "encode_volume",
            left: dims.to_vec(),
            right: vec![2, 2, 2],
        });
    }
    let block = dims.map(|n| n.div_ceil(GRID));
    // Column sums along x for each (y, z) so each block needs only y/z loops.
    let mut sums = vec![0.0; GRID * GRID * GRID];
    for gz in 0..GRID {
        for gy in 0..GRID {
            for gx in 0..GRID {
                let mut acc = 0.0;
                for pz in gz * block[2]..(gz + 1) * block[2] {
                    let z = pz.min(dims[2] - 1);
                    for py in gy * block[1]..(gy + 1) * block[1] {
                        let y = py.min(dims[1] - 1);
                        for px in gx * block[0]..(gx + 1) * block[0] {
                            acc += volume.get(px.min(dims[0] - 1), y, z);
                        }
                    }
                }
                sums[gx + GRID * (gy + GRID * gz)] = acc;
            }
        }
    }
    let per_block = (block[0] * block[1] * block[2]) as f64;
    let mut features: Vec<f64> = sums.iter().map(|s| s / per_block / 1000.0).collect();

    let mut hist = [0.0; HIST_BINS];
    for &hu in volume.voxels() {
        hist[hist_bin(hu)] += 1.0;
    }
    let total = volume.voxels().len() as f64;
    features.extend(hist.iter().map(|c| c / total));
    Ok(features)
}

pub fn hist_bin(hu: f64) -> usize {
    (((hu - HIST_START_HU) / HIST_BIN_HU).floor().max(0.0) as usize).min(HIST_BINS - 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeEncoder {
    pub proj: Linear,
}

impl VolumeEncoder {
    pub fn init(embed_dim: usize, rng: &mut SplitMix64) -> Self {
        Self {
            proj: Linear::init(VOLUME_FEATURES, embed_dim, rng),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.proj.fan_out()
    }

    pub fn forward(&self, tape: &mut Tape, params: &[NodeId], features: NodeId) -> Result<NodeId> {
        let y = Linear::forward(tape, params[0], params[1], features)?;
        tape.l2_normalize_rows(y, NORM_EPS)
    }

    /// Embeds precomputed feature rows (`n x 80`).
    pub fn encode_features(&self, ids: Vec<String>, features: &Tensor) -> Result<EmbeddingSet> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, false);
        let x = tape.constant(features.clone());
        let out = self.forward(&mut tape, &params, x)?;
        EmbeddingSet::new(Modality::C, ids, tape.value(out).clone())
    }

    pub fn encode(&self, id: &str, volume: &Volume) -> Result<super::Embedding> {
        let f = Tensor::new(vec![1, VOLUME_FEATURES], volume_features(volume)?)?;
        Ok(self.encode_features(vec![id.to_string()], &f)?.get(0))
    }
}

impl Parameterized for VolumeEncoder {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("volume.w".into(), &self.proj.weight),
            ("volume.b".into(), &self.proj.bias),
        ]
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("volume.w".into(), &mut self.proj.weight),
            ("volume.b".into(), &mut self.proj.bias),
        ]
    }
}
