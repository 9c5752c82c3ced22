//! Parallel-beam digitally reconstructed radiographs.
//!
//! Each detector pixel integrates linear attenuation along one principal
//! axis (Beer-Lambert): `L = sum mu(voxel) * step_mm`, raw value
//! `1 - exp(-L)` (or `L` itself with [`Transfer::NegLogTransmittance`]),
//! then per-image min-max normalization and an optional bilinear resize.
//!
//! Image orientation for the anteroposterior view (rays along y): column
//! `c` is voxel `x = c`, row `r` is voxel `z = nz - 1 - r` (superior at top).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{write_atomic, ByteReader};
use crate::phantom::Volume;

pub const DEFAULT_MU_WATER: f64 = 0.0205;

const IMAGE_MAGIC: &[u8; 5] = b"X2IMG";

/// Linear attenuation per mm for a Hounsfield value, clamped at zero.
pub fn hu_to_mu(hu: f64, mu_water_per_mm: f64) -> f64 {
    (mu_water_per_mm * (1.0 + hu / 1000.0)).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Axis {
    X,
    /// Anterior-posterior.
    #[default]
    Y,
    Z,
}

impl Axis {
    fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// Intensity mapping applied to each ray's path integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Transfer {
    /// `1 - exp(-L)`: absorbed fraction.
    #[default]
    Absorbed,
    /// `L = -log(transmittance)`.
    NegLogTransmittance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrrConfig {
    pub mu_water: f64,
    pub out_size: usize,
    pub axis: Axis,
    pub transfer: Transfer,
}

impl Default for DrrConfig {
    fn default() -> Self {
        Self {
            mu_water: DEFAULT_MU_WATER,
            out_size: 64,
            axis: Axis::Y,
            transfer: Transfer::Absorbed,
        }
    }
}

impl DrrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu_water > 0.0) {
            return Err(Error::config("mu_water", "must be positive"));
        }
        if self.out_size < 8 {
            return Err(Error::config("image_size", "must be at least 8"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Radiograph {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
    source_id: String,
}

impl Radiograph {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>, source_id: impl Into<String>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Dimension {
                op: "radiograph",
                left: vec![height, width],
                right: vec![pixels.len()],
            });
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::format("radiograph", format!("pixel {p} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            pixels,
            source_id: source_id.into(),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.width + col]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(13 + 4 * self.pixels.len());
        out.extend_from_slice(IMAGE_MAGIC);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        for p in &self.pixels {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], source_id: impl Into<String>) -> Result<Self> {
        let mut r = ByteReader::new("radiograph", bytes);
        r.expect_magic(IMAGE_MAGIC)?;
        let width = r.u32()? as usize;
        let height = r.u32()? as usize;
        let pixels = (0..width * height).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Self::new(width, height, pixels, source_id)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path, source_id: impl Into<String>) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, source_id)
    }

    /// 8-bit binary PGM for viewing.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.pixels.iter().map(|p| (p * 255.0).round() as u8));
        out
    }
}

/// Path integrals of a per-voxel attenuation grid (x-fastest) along `axis`.
/// Returns `(width, height, values)` in the image orientation described in
/// the module docs.
pub fn integrate_mu(mu: &[f64], dims: [usize; 3], spacing_mm: [f64; 3], axis: Axis) -> (usize, usize, Vec<f64>) {
    let [nx, ny, nz] = dims;
    let step = spacing_mm[axis.index()];
    let at = |x: usize, y: usize, z: usize| mu[x + nx * (y + ny * z)];
    match axis {
        Axis::Y => {
            let mut out = vec![0.0; nx * nz];
            for z in 0..nz {
                let row = nz - 1 - z;
                for x in 0..nx {
                    let mut acc = 0.0;
                    for y in 0..ny {
                        acc += at(x, y, z) * step;
                    }
                    out[row * nx + x] = acc;
                }
            }
            (nx, nz, out)
        }
        Axis::X => {
            let mut out = vec![0.0; ny * nz];
            for z in 0..nz {
                let row = nz - 1 - z;
                for y in 0..ny {
                    let mut acc = 0.0;
                    for x in 0..nx {
                        acc += at(x, y, z) * step;
                    }
                    out[row * ny + y] = acc;
                }
            }
            (ny, nz, out)
        }
        Axis::Z => {
            let mut out = vec![0.0; nx * ny];
            for y in 0..ny {
                for x in 0..nx {
                    let mut acc = 0.0;
                    for z in 0..nz {
                        acc += at(x, y, z) * step;
                    }
                    out[y * nx + x] = acc;
                }
            }
            (nx, ny, out)
        }
    }
}

/// Pre-normalization image: transfer function applied to each path integral.
pub fn raw_projection(volume: &Volume, cfg: &DrrConfig) -> Result<(usize, usize, Vec<f64>)> {
    if volume.dims().iter().any(|&d| d < 2) {
        return Err(Error::Dimension {
            op: "project_ap",
            left: volume.dims().to_vec(),
            right: vec![2, 2, 2],
        });
    }
    let mu: Vec<f64> = volume
        .voxels()
        .iter()
        .map(|&hu| hu_to_mu(hu, cfg.mu_water))
        .collect();
    let (w, h, mut values) = integrate_mu(&mu, volume.dims(), volume.spacing_mm(), cfg.axis);
    if cfg.transfer == Transfer::Absorbed {
        values.iter_mut().for_each(|l| *l = -(-*l).exp_m1());
    }
    Ok((w, h, values))
}

/// Maps to `[0, 1]`; a constant image maps to all zeros.
pub fn min_max_normalize(values: &mut [f64]) {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        values.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let range = max - min;
    values
        .iter_mut()
        .for_each(|v| *v = ((*v - min) / range).clamp(0.0, 1.0));
}

/// Bilinear resize with half-pixel-centered sampling, clamped at the edges.
pub fn resize_bilinear(src: &[f64], w: usize, h: usize, out_w: usize, out_h: usize) -> Vec<f64> {
    if w == out_w && h == out_h {
        return src.to_vec();
    }
    let coord = |d: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        let s = ((d as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = Vec::with_capacity(out_w * out_h);
    for r in 0..out_h {
        let (y0, y1, fy) = coord(r, h, out_h);
        for c in 0..out_w {
            let (x0, x1, fx) = coord(c, w, out_w);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

pub fn project_ap(volume: &Volume, cfg: &DrrConfig, source_id: &str) -> Result<Radiograph> {
    cfg.validate()?;
    let (w, h, mut values) = raw_projection(volume, cfg)?;
    min_max_normalize(&mut values);
    let resized = resize_bilinear(&values, w, h, cfg.out_size, cfg.out_size);
    let pixels = resized.iter().map(|&v| (v as f32).clamp(0.0, 1.0)).collect();
    Radiograph::new(cfg.out_size, cfg.out_size, pixels, source_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::HU_AIR;
    use crate::rng::SplitMix64;

    fn cfg(out_size: usize) -> DrrConfig {
        DrrConfig {
            out_size,
            ..DrrConfig::default()
        }
    }

    #[test]
    fn hu_to_mu_reference_points() {
        assert_eq!(hu_to_mu(-1000.0, 0.0205), 0.0);
        assert_eq!(hu_to_mu(0.0, 0.0205), 0.0205);
        assert!((hu_to_mu(1000.0, 0.0205) - 0.041).abs() < 1e-15);
        assert_eq!(hu_to_mu(-1024.0, 0.0205), 0.0);
    }

    #[test]
    fn all_air_projects_to_zeros() {
        let v = Volume::filled([8, 8, 8], [1.0; 3], HU_AIR).unwrap();
        let (_, _, raw) = raw_projection(&v, &cfg(8)).unwrap();
        assert!(raw.iter().all(|&x| x == 0.0));
        let img = project_ap(&v, &cfg(8), "air").unwrap();
        assert!(img.pixels().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn single_water_voxel_raw_value() {
        let mut v = Volume::filled([8, 8, 8], [1.0; 3], HU_AIR).unwrap();
        v.set(3, 4, 5, 0.0);
        let (w, _, raw) = raw_projection(&v, &cfg(8)).unwrap();
        let row = 8 - 1 - 5;
        let expected = 1.0 - (-0.0205f64).exp();
        assert!((raw[row * w + 3] - expected).abs() < 1e-15);
        assert!((raw[row * w + 3] - 0.020291).abs() < 1e-6);
        let hits = raw.iter().filter(|&&x| x > 0.0).count();
        assert_eq!(hits, 1);
    }

    #[test]
    fn centered_sphere_center_ray_dominates_misses() {
        let n = 16;
        let mut v = Volume::filled([n; 3], [1.0; 3], HU_AIR).unwrap();
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    let d = [x, y, z].map(|i| i as f64 + 0.5 - n as f64 / 2.0);
                    if d.iter().map(|c| c * c).sum::<f64>() <= 25.0 {
                        v.set(x, y, z, 500.0);
                    }
                }
            }
        }
        let (w, _, raw) = raw_projection(&v, &cfg(n)).unwrap();
        let center = raw[(n / 2) * w + n / 2];
        let corner = raw[0];
        assert!(center > corner);
        assert!(raw.iter().all(|&x| x <= center));
    }

    #[test]
    fn transmittance_is_multiplicative_over_summed_attenuation() {
        let mut rng = SplitMix64::new(17);
        let dims = [5, 6, 7];
        let n: usize = dims.iter().product();
        for _ in 0..20 {
            let a: Vec<f64> = (0..n).map(|_| rng.uniform(0.0, 0.05)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.uniform(0.0, 0.05)).collect();
            let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let (_, _, la) = integrate_mu(&a, dims, [1.0, 0.7, 1.3], Axis::Y);
            let (_, _, lb) = integrate_mu(&b, dims, [1.0, 0.7, 1.3], Axis::Y);
            let (_, _, lab) = integrate_mu(&ab, dims, [1.0, 0.7, 1.3], Axis::Y);
            for i in 0..la.len() {
                let product = (-la[i]).exp() * (-lb[i]).exp();
                assert!(((-lab[i]).exp() - product).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn raising_a_voxel_never_lowers_raw_pixels() {
        let mut rng = SplitMix64::new(4);
        let mut v = Volume::filled([6, 6, 6], [1.0; 3], 0.0).unwrap();
        for z in 0..6 {
            for y in 0..6 {
                for x in 0..6 {
                    v.set(x, y, z, rng.uniform(-1024.0, 2000.0).round());
                }
            }
        }
        let (_, _, before) = raw_projection(&v, &cfg(8)).unwrap();
        for _ in 0..30 {
            let (x, y, z) = (rng.below(6) as usize, rng.below(6) as usize, rng.below(6) as usize);
            let mut bumped = v.clone();
            bumped.set(x, y, z, v.get(x, y, z) + rng.uniform(0.0, 500.0));
            let (_, _, after) = raw_projection(&bumped, &cfg(8)).unwrap();
            assert!(after.iter().zip(&before).all(|(a, b)| a >= b));
        }
    }

    #[test]
    fn resize_identity_and_constant_preserving() {
        let src: Vec<f64> = (0..16).map(|i| i as f64 / 15.0).collect();
        assert_eq!(resize_bilinear(&src, 4, 4, 4, 4), src);
        let flat = vec![0.25; 9];
        assert!(resize_bilinear(&flat, 3, 3, 7, 7).iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let up = resize_bilinear(&src, 4, 4, 9, 9);
        assert!(up.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(up[0], 0.0);
        assert_eq!(*up.last().unwrap(), 1.0);
    }

    #[test]
    fn output_in_unit_range_and_deterministic() {
        let cfg_gen = crate::phantom::GenConfig {
            n_train: 1,
            n_test: 1,
            label_space: crate::phantom::LabelSpace::standard(0.5).unwrap(),
            dims: [16, 16, 16],
            spacing_mm: [1.0; 3],
            seed: 3,
        };
        let (t, v) = crate::phantom::synthesize(&cfg_gen, 0).unwrap();
        let a = project_ap(&v, &cfg(24), &t.id).unwrap();
        let b = project_ap(&v, &cfg(24), &t.id).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.width(), a.height()), (24, 24));
        assert!(a.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
        assert_eq!(Radiograph::from_bytes(&a.to_bytes(), &t.id).unwrap(), a);
    }

    #[test]
    fn degenerate_volume_rejected() {
        let v = Volume::filled([1, 8, 8], [1.0; 3], 0.0).unwrap();
        assert!(matches!(project_ap(&v, &cfg(8), "x"), Err(Error::Dimension { .. })));
    }
}
