//! Procedural chest phantoms with label-specific inserts and templated reports.
//!
//! A volume is painted in normalized coordinates `u = (i + 0.5) / n` along
//! each axis (x: left-right, y: anterior-posterior, z: inferior-superior):
//!
//! | structure | shape | center | radii / half-extent | HU |
//! |---|---|---|---|---|
//! | body | ellipsoid | (0.50, 0.50, 0.50) | (0.42, 0.30, 0.46) x U[0.92, 1.0] per axis | 40 |
//! | lungs | ellipsoids | (0.29 / 0.71, 0.48, 0.58) | (0.14, 0.19, 0.30) x U[0.90, 1.05] | -800 |
//! | spine | z-cylinder | (0.50, 0.70), z in [0.08, 0.92] | r = 0.055 | 700 |
//!
//! Each positive label then paints one insert from [`INSERT_TABLE`], with its
//! center jittered by U[-0.025, 0.025] per axis and its size scaled by
//! U[0.85, 1.15]. Jitter is drawn for every table entry regardless of the
//! label value, so toggling a label changes only that insert's voxels.
//! Voxels inside the body receive integer noise `round(20 (u1 + u2 - 1))` HU.
//! All voxel values are integers, hence exact in the f32 file format.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{write_atomic, ByteReader};
use crate::rng::SplitMix64;

pub const HU_MIN: f64 = -1024.0;
pub const HU_MAX: f64 = 3000.0;
pub const HU_AIR: f64 = -1000.0;
pub const HU_SOFT_TISSUE: f64 = 40.0;
pub const HU_LUNG: f64 = -800.0;
pub const HU_SPINE: f64 = 700.0;

const VOLUME_MAGIC: &[u8; 5] = b"X2VOL";

const TAG_LABELS: u64 = 1;
const TAG_REPORT: u64 = 2;
const TAG_NOISE: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Ellipsoid,
    Box,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InsertSpec {
    pub name: &'static str,
    pub shape: Shape,
    pub center: [f64; 3],
    pub extent: [f64; 3],
    pub hu: f64,
}

/// Fixed label-to-insert geometry. Zero-shot prompts refer to these names.
pub const INSERT_TABLE: [InsertSpec; 8] = [
    InsertSpec {
        name: "cardiomegaly",
        shape: Shape::Ellipsoid,
        center: [0.52, 0.42, 0.40],
        extent: [0.19, 0.15, 0.13],
        hu: 45.0,
    },
    InsertSpec {
        name: "pleural_effusion",
        shape: Shape::Box,
        center: [0.71, 0.52, 0.36],
        extent: [0.12, 0.17, 0.07],
        hu: 15.0,
    },
    InsertSpec {
        name: "lung_nodule",
        shape: Shape::Ellipsoid,
        center: [0.27, 0.42, 0.66],
        extent: [0.05, 0.05, 0.05],
        hu: 60.0,
    },
    InsertSpec {
        name: "coronary_calcification",
        shape: Shape::Ellipsoid,
        center: [0.46, 0.36, 0.44],
        extent: [0.035, 0.035, 0.035],
        hu: 1200.0,
    },
    InsertSpec {
        name: "emphysema",
        shape: Shape::Ellipsoid,
        center: [0.29, 0.50, 0.76],
        extent: [0.10, 0.14, 0.08],
        hu: -980.0,
    },
    InsertSpec {
        name: "consolidation",
        shape: Shape::Ellipsoid,
        center: [0.72, 0.44, 0.62],
        extent: [0.09, 0.12, 0.09],
        hu: 30.0,
    },
    InsertSpec {
        name: "lymphadenopathy",
        shape: Shape::Ellipsoid,
        center: [0.50, 0.50, 0.72],
        extent: [0.06, 0.06, 0.06],
        hu: 300.0,
    },
    InsertSpec {
        name: "atelectasis",
        shape: Shape::Ellipsoid,
        center: [0.30, 0.56, 0.45],
        extent: [0.08, 0.10, 0.06],
        hu: -100.0,
    },
];

pub fn insert_spec(name: &str) -> Option<&'static InsertSpec> {
    INSERT_TABLE.iter().find(|s| s.name == name)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSpace {
    names: Vec<String>,
    prevalence: Vec<f64>,
}

impl LabelSpace {
    pub fn new(names: Vec<String>, prevalence: Vec<f64>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::config("labels", "label space is empty"));
        }
        if names.len() != prevalence.len() {
            return Err(Error::config(
                "prevalence",
                format!("{} values for {} labels", prevalence.len(), names.len()),
            ));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(Error::config("labels", format!("duplicate label {name}")));
            }
            if insert_spec(name).is_none() {
                return Err(Error::config(
                    "labels",
                    format!("{name} has no entry in the insert table"),
                ));
            }
        }
        if let Some(p) = prevalence.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return Err(Error::config("prevalence", format!("{p} is not in (0, 1)")));
        }
        Ok(Self { names, prevalence })
    }

    /// All table labels at a shared prevalence.
    pub fn standard(prevalence: f64) -> Result<Self> {
        let names = INSERT_TABLE.iter().map(|s| s.name.to_string()).collect();
        Self::new(names, vec![prevalence; INSERT_TABLE.len()])
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn prevalence(&self) -> &[f64] {
        &self.prevalence
    }
}

/// HU grid, x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    voxels: Vec<f64>,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing_mm: [f64; 3], voxels: Vec<f64>) -> Result<Self> {
        let count = dims.iter().product::<usize>();
        if voxels.len() != count {
            return Err(Error::Dimension {
                op: "volume",
                left: dims.to_vec(),
                right: vec![voxels.len()],
            });
        }
        if let Some(v) = voxels.iter().find(|v| !(HU_MIN..=HU_MAX).contains(*v)) {
            return Err(Error::format("volume", format!("HU value {v} out of range")));
        }
        Ok(Self {
            dims,
            spacing_mm,
            voxels,
        })
    }

    pub fn filled(dims: [usize; 3], spacing_mm: [f64; 3], hu: f64) -> Result<Self> {
        Self::new(dims, spacing_mm, vec![hu; dims.iter().product()])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing_mm(&self) -> [f64; 3] {
        self.spacing_mm
    }

    pub fn voxels(&self) -> &[f64] {
        &self.voxels
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.voxels[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, hu: f64) {
        let i = self.index(x, y, z);
        self.voxels[i] = hu.clamp(HU_MIN, HU_MAX);
    }

    pub fn mean_hu(&self) -> f64 {
        self.voxels.iter().sum::<f64>() / self.voxels.len() as f64
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5 + 24 + 4 * self.voxels.len());
        out.extend_from_slice(VOLUME_MAGIC);
        for d in self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for s in self.spacing_mm {
            out.extend_from_slice(&(s as f32).to_le_bytes());
        }
        for v in &self.voxels {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new("volume", bytes);
        r.expect_magic(VOLUME_MAGIC)?;
        let dims = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
        let spacing = [r.f32()? as f64, r.f32()? as f64, r.f32()? as f64];
        let count = dims.iter().product::<usize>();
        let voxels = (0..count)
            .map(|_| r.f32().map(f64::from))
            .collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Self::new(dims, spacing, voxels)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One manifest record. Field order is the JSON-Lines wire order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub id: String,
    #[serde(rename = "volume")]
    pub volume_ref: String,
    #[serde(rename = "report")]
    pub report_text: String,
    pub labels: Vec<u8>,
    pub split: Split,
}

impl Triplet {
    pub fn radiograph_ref(&self) -> String {
        format!("radiographs/{}.x2img", self.id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub label_space: LabelSpace,
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub seed: u64,
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 {
            return Err(Error::config("n_train", "must be at least 1"));
        }
        if self.n_test == 0 {
            return Err(Error::config("n_test", "must be at least 1"));
        }
        if self.dims.iter().any(|&d| d < 8) {
            return Err(Error::config("dims", "each dimension must be at least 8"));
        }
        if self.spacing_mm.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::config("spacing_mm", "must be positive"));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.n_train + self.n_test
    }

    pub fn id_for(index: usize) -> String {
        format!("case-{index:06}")
    }

    pub fn split_for(&self, index: usize) -> Split {
        if index < self.n_train {
            Split::Train
        } else {
            Split::Test
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Region {
    shape: Shape,
    center: [f64; 3],
    extent: [f64; 3],
    hu: f64,
}

impl Region {
    fn contains(&self, u: [f64; 3]) -> bool {
        match self.shape {
            Shape::Ellipsoid => {
                (0..3)
                    .map(|a| ((u[a] - self.center[a]) / self.extent[a]).powi(2))
                    .sum::<f64>()
                    <= 1.0
            }
            Shape::Box => (0..3).all(|a| (u[a] - self.center[a]).abs() <= self.extent[a]),
        }
    }
}

struct Anatomy {
    body: Region,
    lungs: [Region; 2],
    spine_center: [f64; 2],
    spine_radius: f64,
    inserts: Vec<Region>,
}

impl Anatomy {
    fn draw(rng: &mut SplitMix64, label_space: &LabelSpace) -> Self {
        let body_scale = [
            rng.uniform(0.92, 1.0),
            rng.uniform(0.92, 1.0),
            rng.uniform(0.92, 1.0),
        ];
        let lung_scale = rng.uniform(0.90, 1.05);
        let body = Region {
            shape: Shape::Ellipsoid,
            center: [0.5, 0.5, 0.5],
            extent: [0.42 * body_scale[0], 0.30 * body_scale[1], 0.46 * body_scale[2]],
            hu: HU_SOFT_TISSUE,
        };
        let lung = |cx: f64| Region {
            shape: Shape::Ellipsoid,
            center: [cx, 0.48, 0.58],
            extent: [0.14 * lung_scale, 0.19 * lung_scale, 0.30 * lung_scale],
            hu: HU_LUNG,
        };
        let inserts = label_space
            .names()
            .iter()
            .map(|name| {
                let spec = insert_spec(name).expect("validated label space");
                let mut center = spec.center;
                for c in &mut center {
                    *c += rng.uniform(-0.025, 0.025);
                }
                let size = rng.uniform(0.85, 1.15);
                Region {
                    shape: spec.shape,
                    center,
                    extent: spec.extent.map(|e| e * size),
                    hu: spec.hu,
                }
            })
            .collect();
        Self {
            body,
            lungs: [lung(0.29), lung(0.71)],
            spine_center: [0.5, 0.70],
            spine_radius: 0.055,
            inserts,
        }
    }

    fn paint(&self, cfg: &GenConfig, labels: &[u8], noise: &mut SplitMix64) -> Volume {
        let [nx, ny, nz] = cfg.dims;
        let mut voxels = Vec::with_capacity(nx * ny * nz);
        let active: Vec<&Region> = self
            .inserts
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == 1)
            .map(|(r, _)| r)
            .collect();
        for z in 0..nz {
            let uz = (z as f64 + 0.5) / nz as f64;
            for y in 0..ny {
                let uy = (y as f64 + 0.5) / ny as f64;
                for x in 0..nx {
                    let ux = (x as f64 + 0.5) / nx as f64;
                    let u = [ux, uy, uz];
                    if !self.body.contains(u) {
                        voxels.push(HU_AIR);
                        continue;
                    }
                    let mut hu = self.body.hu;
                    if self.lungs.iter().any(|l| l.contains(u)) {
                        hu = HU_LUNG;
                    }
                    let dx = ux - self.spine_center[0];
                    let dy = uy - self.spine_center[1];
                    if (0.08..=0.92).contains(&uz)
                        && dx * dx + dy * dy <= self.spine_radius * self.spine_radius
                    {
                        hu = HU_SPINE;
                    }
                    for insert in &active {
                        if insert.contains(u) {
                            hu = insert.hu;
                        }
                    }
                    let jitter = (20.0 * (noise.next_f64() + noise.next_f64() - 1.0)).round();
                    voxels.push((hu + jitter).clamp(HU_MIN, HU_MAX));
                }
            }
        }
        Volume {
            dims: cfg.dims,
            spacing_mm: cfg.spacing_mm,
            voxels,
        }
    }
}

/// Draws the label vector for triplet `index`.
pub fn draw_labels(cfg: &GenConfig, index: usize) -> Vec<u8> {
    let mut rng = SplitMix64::stream(cfg.seed, TAG_LABELS, index as u64);
    cfg.label_space
        .prevalence()
        .iter()
        .map(|&p| u8::from(rng.bernoulli(p)))
        .collect()
}

/// One sentence per positive label, negations for a random half of the
/// negatives, sentences in shuffled order.
pub fn render_report(labels: &[u8], label_space: &LabelSpace, rng: &mut SplitMix64) -> String {
    let mut negatives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
    rng.shuffle(&mut negatives);
    negatives.truncate(negatives.len() / 2);
    negatives.sort_unstable();

    let mut sentences: Vec<String> = Vec::new();
    for (i, name) in label_space.names().iter().enumerate() {
        if labels.get(i) == Some(&1) {
            sentences.push(format!("{} is present.", capitalize(name)));
        } else if negatives.binary_search(&i).is_ok() {
            sentences.push(format!("No {name}."));
        }
    }
    rng.shuffle(&mut sentences);
    sentences.join(" ")
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Synthesizes triplet `index` with the given label vector.
pub fn synthesize_with_labels(cfg: &GenConfig, index: usize, labels: Vec<u8>) -> Result<(Triplet, Volume)> {
    if labels.len() != cfg.label_space.len() {
        return Err(Error::Dimension {
            op: "synthesize",
            left: vec![cfg.label_space.len()],
            right: vec![labels.len()],
        });
    }
    let mut geometry = SplitMix64::stream(cfg.seed, TAG_LABELS, index as u64);
    // Skip the label draws so geometry is independent of the label override.
    for _ in 0..cfg.label_space.len() {
        geometry.next_u64();
    }
    let anatomy = Anatomy::draw(&mut geometry, &cfg.label_space);
    let mut noise = SplitMix64::stream(cfg.seed, TAG_NOISE, index as u64);
    let volume = anatomy.paint(cfg, &labels, &mut noise);

    let mut report_rng = SplitMix64::stream(cfg.seed, TAG_REPORT, index as u64);
    let report_text = render_report(&labels, &cfg.label_space, &mut report_rng);
    let id = GenConfig::id_for(index);
    let triplet = Triplet {
        volume_ref: format!("volumes/{id}.x2vol"),
        id,
        report_text,
        labels,
        split: cfg.split_for(index),
    };
    Ok((triplet, volume))
}

pub fn synthesize(cfg: &GenConfig, index: usize) -> Result<(Triplet, Volume)> {
    synthesize_with_labels(cfg, index, draw_labels(cfg, index))
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const LABEL_SPACE_FILE: &str = "label_space.json";

/// Writes volume files, `label_space.json` and the manifest under `out_dir`.
///
/// `per_triplet` runs after each volume is written (possibly in parallel) and
/// can emit derived artifacts such as radiographs.
pub fn generate_dataset_with<F>(cfg: &GenConfig, out_dir: &Path, per_triplet: F) -> Result<Vec<Triplet>>
where
    F: Fn(&Triplet, &Volume) -> Result<()> + Sync,
{
    cfg.validate()?;
    let volumes_dir = out_dir.join("volumes");
    fs::create_dir_all(&volumes_dir).map_err(|e| Error::io(&volumes_dir, e))?;

    let mut triplets = (0..cfg.total())
        .into_par_iter()
        .map(|index| {
            let (triplet, volume) = synthesize(cfg, index)?;
            volume.write(&out_dir.join(&triplet.volume_ref))?;
            per_triplet(&triplet, &volume)?;
            Ok(triplet)
        })
        .collect::<Result<Vec<_>>>()?;
    triplets.sort_by(|a, b| a.id.cmp(&b.id));

    let label_json = serde_json::to_vec_pretty(&cfg.label_space)
        .map_err(|e| Error::format("label space", e.to_string()))?;
    write_atomic(&out_dir.join(LABEL_SPACE_FILE), &label_json)?;
    write_manifest(&out_dir.join(MANIFEST_FILE), &triplets)?;
    Ok(triplets)
}

pub fn generate_dataset(cfg: &GenConfig, out_dir: &Path) -> Result<Vec<Triplet>> {
    generate_dataset_with(cfg, out_dir, |_, _| Ok(()))
}

pub fn manifest_to_string(triplets: &[Triplet]) -> String {
    let mut out = String::new();
    for t in triplets {
        out.push_str(&serde_json::to_string(t).expect("triplet serializes"));
        out.push('\n');
    }
    out
}

pub fn write_manifest(path: &Path, triplets: &[Triplet]) -> Result<()> {
    write_atomic(path, manifest_to_string(triplets).as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<Vec<Triplet>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line)
                .map_err(|e| Error::format("manifest", format!("line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn read_label_space(dir: &Path) -> Result<LabelSpace> {
    let path: PathBuf = dir.join(LABEL_SPACE_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let raw: LabelSpace =
        serde_json::from_slice(&bytes).map_err(|e| Error::format("label space", e.to_string()))?;
    LabelSpace::new(raw.names, raw.prevalence)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(n_train: usize, prevalence: f64, seed: u64) -> GenConfig {
        GenConfig {
            n_train,
            n_test: 1,
            label_space: LabelSpace::standard(prevalence).unwrap(),
            dims: [16, 16, 16],
            spacing_mm: [1.0; 3],
            seed,
        }
    }

    #[test]
    fn label_space_validation() {
        assert!(LabelSpace::standard(0.0).is_err());
        assert!(LabelSpace::standard(1.0).is_err());
        assert!(LabelSpace::new(vec!["emphysema".into(), "emphysema".into()], vec![0.3, 0.3]).is_err());
        assert!(LabelSpace::new(vec!["fracture".into()], vec![0.3]).is_err());
        assert_eq!(LabelSpace::standard(0.3).unwrap().len(), 8);
    }

    #[test]
    fn all_negative_triplet_has_no_inserts_and_only_negations() {
        let cfg = small_cfg(1, 0.3, 5);
        let (t, v) = synthesize_with_labels(&cfg, 0, vec![0; 8]).unwrap();
        assert!(!t.report_text.contains("is present"));
        assert_eq!(t.report_text.matches("No ").count(), 4);
        // No voxel carries an insert-only HU level (noise is at most 20 HU).
        assert!(v.voxels().iter().all(|&hu| !(hu > 1000.0 || (hu < -960.0 && hu > -1000.0))));
    }

    #[test]
    fn toggling_a_label_changes_mean_hu() {
        let cfg = small_cfg(1, 0.3, 11);
        let (_, base) = synthesize_with_labels(&cfg, 0, vec![0; 8]).unwrap();
        for l in 0..8 {
            let mut labels = vec![0; 8];
            labels[l] = 1;
            let (_, with) = synthesize_with_labels(&cfg, 0, labels).unwrap();
            let diff = with.mean_hu() - base.mean_hu();
            assert!(diff.abs() > 0.0, "label {l} is invisible");
            let changed = base
                .voxels()
                .iter()
                .zip(with.voxels())
                .filter(|(a, b)| a != b)
                .count();
            assert!(changed > 0);
        }
    }

    #[test]
    fn report_templates() {
        let space = LabelSpace::standard(0.3).unwrap();
        let mut rng = SplitMix64::new(3);
        let mut labels = vec![0u8; 8];
        labels[0] = 1;
        let text = render_report(&labels, &space, &mut rng);
        assert!(text.contains("Cardiomegaly is present."), "{text}");
        assert_eq!(text.matches("is present").count(), 1);
        assert_eq!(text.matches("No ").count(), 3);

        let a = render_report(&labels, &space, &mut SplitMix64::new(9));
        let b = render_report(&labels, &space, &mut SplitMix64::new(9));
        assert_eq!(a, b);

        let none = render_report(&[0; 8], &space, &mut SplitMix64::new(1));
        assert!(!none.contains("is present"));
    }

    #[test]
    fn volume_bytes_round_trip() {
        let cfg = small_cfg(1, 0.3, 2);
        let (_, v) = synthesize(&cfg, 0).unwrap();
        let bytes = v.to_bytes();
        assert_eq!(&bytes[..5], b"X2VOL");
        assert_eq!(bytes.len(), 5 + 12 + 12 + 4 * 16 * 16 * 16);
        assert_eq!(Volume::from_bytes(&bytes).unwrap(), v);
        assert!(Volume::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn empirical_prevalence_matches_config() {
        let cfg = GenConfig {
            n_train: 1000,
            ..small_cfg(1000, 0.3, 21)
        };
        let mut counts = [0usize; 8];
        for i in 0..1000 {
            for (c, l) in counts.iter_mut().zip(draw_labels(&cfg, i)) {
                *c += l as usize;
            }
        }
        for c in counts {
            let rate = c as f64 / 1000.0;
            assert!((rate - 0.3).abs() <= 0.05, "rate {rate}");
        }
    }

    #[test]
    fn rejects_tiny_dims() {
        let mut cfg = small_cfg(1, 0.3, 1);
        cfg.dims = [7, 16, 16];
        assert!(matches!(cfg.validate(), Err(Error::Config { .. })));
    }
}
