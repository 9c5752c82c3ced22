use serde::{Deserialize, Serialize};

use super::{EmbeddingSet, Linear, Modality, Parameterized, NORM_EPS};
use crate::drr::Radiograph;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{NodeId, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentConfig {
    pub patch: usize,
    pub patch_hidden: usize,
    pub hidden: usize,
    pub embed_dim: usize,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self {
            patch: 8,
            patch_hidden: 64,
            hidden: 64,
            embed_dim: 32,
        }
    }
}

impl StudentConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("patch", self.patch),
            ("patch_hidden", self.patch_hidden),
            ("hidden", self.hidden),
            ("embed_dim", self.embed_dim),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        Ok(())
    }

    /// Number of patches for a `width x height` image after padding.
    pub fn patch_count(&self, width: usize, height: usize) -> usize {
        width.div_ceil(self.patch) * height.div_ceil(self.patch)
    }
}

/// Splits an image into non-overlapping `patch x patch` tiles, one row per
/// tile in row-major tile order; pixels within a tile are row-major too.
///
/// Sizes not divisible by `patch` are padded by replicating the last row and
/// column. A patch larger than the image is an error.
pub fn image_patches(pixels: &[f32], width: usize, height: usize, patch: usize) -> Result<Vec<f64>> {
    if patch == 0 || patch > width || patch > height || pixels.len() != width * height {
        return Err(Error::Dimension {
            op: "image_patches",
            left: vec![height, width],
            right: vec![patch, patch],
        });
    }
    let (tiles_x, tiles_y) = (width.div_ceil(patch), height.div_ceil(patch));
    let mut out = Vec::with_capacity(tiles_x * tiles_y * patch * patch);
    for ty in 0..tiles_y {
        for tx in 0..tiles_x {
            for dy in 0..patch {
                let row = (ty * patch + dy).min(height - 1);
                for dx in 0..patch {
                    let col = (tx * patch + dx).min(width - 1);
                    out.push(f64::from(pixels[row * width + col]));
                }
            }
        }
    }
    Ok(out)
}

/// Patch network: `patch -> Linear -> relu -> mean pool -> Linear -> relu ->
/// Linear -> l2 normalize`.
///
/// The relu before pooling matters: without it, pooling commutes with the
/// patch embedding and the whole image collapses to its mean tile.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiographEncoder {
    pub config: StudentConfig,
    pub patch_embed: Linear,
    pub mlp1: Linear,
    pub mlp2: Linear,
}

impl RadiographEncoder {
    pub fn init(config: StudentConfig, rng: &mut SplitMix64) -> Result<Self> {
        config.validate()?;
        let patch_embed = Linear::init(config.patch * config.patch, config.patch_hidden, rng);
        let mlp1 = Linear::init(config.patch_hidden, config.hidden, rng);
        let mlp2 = Linear::init(config.hidden, config.embed_dim, rng);
        Ok(Self {
            config,
            patch_embed,
            mlp1,
            mlp2,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    /// Stacks the patch rows of every image: `(n * patches) x patch^2`.
    pub fn patch_matrix(&self, images: &[&Radiograph]) -> Result<Tensor> {
        let p = self.config.patch;
        let Some(first) = images.first() else {
            return Ok(Tensor::zeros(vec![0, p * p]));
        };
        let (w, h) = (first.width(), first.height());
        let mut data = Vec::new();
        for img in images {
            if (img.width(), img.height()) != (w, h) {
                return Err(Error::Dimension {
                    op: "patch_matrix",
                    left: vec![h, w],
                    right: vec![img.height(), img.width()],
                });
            }
            data.extend(image_patches(img.pixels(), w, h, p)?);
        }
        let rows = data.len() / (p * p);
        Tensor::new(vec![rows, p * p], data)
    }

    /// Tape forward from a patch matrix holding `patches_per_image` rows per
    /// image; `params` as returned by `bind`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &[NodeId],
        patches: NodeId,
        patches_per_image: usize,
    ) -> Result<NodeId> {
        let e = Linear::forward(tape, params[0], params[1], patches)?;
        let e = tape.relu(e)?;
        let pooled = tape.mean_pool(e, patches_per_image)?;
        let h = Linear::forward(tape, params[2], params[3], pooled)?;
        let h = tape.relu(h)?;
        let y = Linear::forward(tape, params[4], params[5], h)?;
        tape.l2_normalize_rows(y, NORM_EPS)
    }

    pub fn encode_batch(&self, ids: Vec<String>, images: &[&Radiograph]) -> Result<EmbeddingSet> {
        if images.is_empty() {
            return EmbeddingSet::new(Modality::X, ids, Tensor::zeros(vec![0, self.embed_dim()]));
        }
        let per = self.config.patch_count(images[0].width(), images[0].height());
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, false);
        let x = tape.constant(self.patch_matrix(images)?);
        let out = self.forward(&mut tape, &params, x, per)?;
        EmbeddingSet::new(Modality::X, ids, tape.value(out).clone())
    }

    pub fn encode(&self, image: &Radiograph) -> Result<super::Embedding> {
        Ok(self.encode_batch(vec![image.source_id().to_string()], &[image])?.get(0))
    }
}

impl Parameterized for RadiographEncoder {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("student.patch.w".into(), &self.patch_embed.weight),
            ("student.patch.b".into(), &self.patch_embed.bias),
            ("student.mlp1.w".into(), &self.mlp1.weight),
            ("student.mlp1.b".into(), &self.mlp1.bias),
            ("student.mlp2.w".into(), &self.mlp2.weight),
            ("student.mlp2.b".into(), &self.mlp2.bias),
        ]
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("student.patch.w".into(), &mut self.patch_embed.weight),
            ("student.patch.b".into(), &mut self.patch_embed.bias),
            ("student.mlp1.w".into(), &mut self.mlp1.weight),
            ("student.mlp1.b".into(), &mut self.mlp1.bias),
            ("student.mlp2.w".into(), &mut self.mlp2.weight),
            ("student.mlp2.b".into(), &mut self.mlp2.bias),
        ]
    }
}
