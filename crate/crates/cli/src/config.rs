//! Flat `key = value` run configuration.
//!
//! A run starts from the desk preset, optionally applies the paper preset,
//! then any config files and `--set` overrides in order. Unknown keys and
//! unparsable values are rejected with the key named in the error.

use std::fmt::Write;
use std::path::Path;

use x2ct_core::contrastive::TrainConfig;
use x2ct_core::drr::{Axis, DrrConfig, Transfer};
use x2ct_core::eval::ProbeConfig;
use x2ct_core::io::sha256_hex;
use x2ct_core::phantom::{GenConfig, LabelSpace};
use x2ct_core::{Error, Reduction, Result, StudentConfig};

pub const DESK: &str = include_str!("../presets/desk.cfg");
pub const PAPER: &str = include_str!("../presets/paper.cfg");

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: String,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub prevalence: f64,
    pub drr: DrrConfig,
    pub embed_dim: usize,
    pub student: StudentConfig,
    pub train: TrainConfig,
    pub teacher_lr: f64,
    pub teacher_epochs: usize,
    pub zeroshot_tau: f64,
    pub probe: ProbeConfig,
    pub fewshot_fractions: Vec<f64>,
    pub ablation_fraction: f64,
    pub recall_ks: Vec<usize>,
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse {value:?}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| parse(key, v)).collect()
}

fn parse_triple<T: std::str::FromStr + Copy>(key: &str, value: &str) -> Result<[T; 3]> {
    let v: Vec<T> = parse_list(key, value)?;
    match v.as_slice() {
        [x] => Ok([*x; 3]),
        [x, y, z] => Ok([*x, *y, *z]),
        _ => Err(Error::config(key, "expects one or three comma-separated values")),
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::preset("desk").expect("desk preset parses")
    }
}

impl RunConfig {
    /// Built-in empty starting point; every field is overwritten by the desk
    /// preset, which lists all keys.
    fn blank() -> Self {
        Self {
            preset: String::new(),
            seed: 0,
            n_train: 0,
            n_test: 0,
            dims: [0; 3],
            spacing_mm: [0.0; 3],
            prevalence: 0.0,
            drr: DrrConfig::default(),
            embed_dim: 0,
            student: StudentConfig::default(),
            train: TrainConfig::default(),
            teacher_lr: 0.0,
            teacher_epochs: 0,
            zeroshot_tau: 0.0,
            probe: ProbeConfig::default(),
            fewshot_fractions: Vec::new(),
            ablation_fraction: 0.0,
            recall_ks: Vec::new(),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        let mut cfg = Self::blank();
        cfg.apply_text(DESK)?;
        match name {
            "desk" => {}
            "paper" => cfg.apply_text(PAPER)?,
            other => return Err(Error::config("preset", format!("unknown preset {other:?}"))),
        }
        Ok(cfg)
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.apply_assignment(line)?;
        }
        Ok(())
    }

    /// Applies one `key=value` pair.
    pub fn apply_assignment(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(assignment.trim(), "expected key = value"))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "preset" => self.preset = v.to_string(),
            "seed" => self.seed = parse(key, v)?,
            "n_train" => self.n_train = parse(key, v)?,
            "n_test" => self.n_test = parse(key, v)?,
            "dims" => self.dims = parse_triple(key, v)?,
            "spacing_mm" => self.spacing_mm = parse_triple(key, v)?,
            "prevalence" => self.prevalence = parse(key, v)?,
            "mu_water" => self.drr.mu_water = parse(key, v)?,
            "image_size" => self.drr.out_size = parse(key, v)?,
            "projection_axis" => {
                self.drr.axis = match v {
                    "x" => Axis::X,
                    "y" => Axis::Y,
                    "z" => Axis::Z,
                    _ => return Err(Error::config(key, "expects x, y or z")),
                }
            }
            "transfer" => {
                self.drr.transfer = match v {
                    "absorbed" => Transfer::Absorbed,
                    "neglog" => Transfer::NegLogTransmittance,
                    _ => return Err(Error::config(key, "expects absorbed or neglog")),
                }
            }
            "embed_dim" => {
                self.embed_dim = parse(key, v)?;
                self.student.embed_dim = self.embed_dim;
            }
            "patch" => self.student.patch = parse(key, v)?,
            "patch_hidden" => self.student.patch_hidden = parse(key, v)?,
            "hidden" => self.student.hidden = parse(key, v)?,
            "tau" => self.train.tau = parse(key, v)?,
            "lr" => self.train.lr = parse(key, v)?,
            "teacher_lr" => self.teacher_lr = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "epochs" => self.train.epochs = parse(key, v)?,
            "teacher_epochs" => self.teacher_epochs = parse(key, v)?,
            "weight_decay" => self.train.weight_decay = parse(key, v)?,
            "adam_beta1" => self.train.adam_beta1 = parse(key, v)?,
            "adam_beta2" => self.train.adam_beta2 = parse(key, v)?,
            "adam_eps" => self.train.adam_eps = parse(key, v)?,
            "reduction" => {
                self.train.reduction = match v {
                    "mean" => Reduction::Mean,
                    "sum" => Reduction::Sum,
                    _ => return Err(Error::config(key, "expects mean or sum")),
                }
            }
            "zeroshot_tau" => self.zeroshot_tau = parse(key, v)?,
            "probe_lr" => self.probe.lr = parse(key, v)?,
            "probe_epochs" => self.probe.epochs = parse(key, v)?,
            "probe_l2" => self.probe.l2 = parse(key, v)?,
            "fewshot_fractions" => self.fewshot_fractions = parse_list(key, v)?,
            "ablation_fraction" => self.ablation_fraction = parse(key, v)?,
            "recall_ks" => self.recall_ks = parse_list(key, v)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        self.train.seed = self.seed;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.gen_config()?.validate()?;
        self.drr.validate()?;
        self.student.validate()?;
        self.train.validate()?;
        self.teacher_train().validate()?;
        if self.embed_dim == 0 {
            return Err(Error::config("embed_dim", "must be positive"));
        }
        if !(self.zeroshot_tau > 0.0) {
            return Err(Error::config("zeroshot_tau", "must be positive"));
        }
        if !(self.probe.lr > 0.0) || self.probe.l2 < 0.0 {
            return Err(Error::config("probe_lr", "must be positive (and probe_l2 non-negative)"));
        }
        if let Some(&f) = self.fewshot_fractions.iter().find(|&&f| !(f > 0.0 && f < 1.0)) {
            return Err(Error::config("fewshot_fractions", format!("fractions must lie in (0, 1), got {f}")));
        }
        if !(self.ablation_fraction > 0.0 && self.ablation_fraction < 1.0) {
            return Err(Error::config(
                "ablation_fraction",
                format!("must lie in (0, 1), got {}", self.ablation_fraction),
            ));
        }
        if self.recall_ks.is_empty() || self.recall_ks.iter().any(|&k| k == 0 || k > self.n_test) {
            return Err(Error::config("recall_ks", format!("each k must lie in 1..={}", self.n_test)));
        }
        Ok(())
    }

    pub fn gen_config(&self) -> Result<GenConfig> {
        Ok(GenConfig {
            n_train: self.n_train,
            n_test: self.n_test,
            label_space: LabelSpace::standard(self.prevalence)
                .map_err(|e| Error::config("prevalence", e.to_string()))?,
            dims: self.dims,
            spacing_mm: self.spacing_mm,
            seed: self.seed,
        })
    }

    pub fn teacher_train(&self) -> TrainConfig {
        TrainConfig {
            lr: self.teacher_lr,
            epochs: self.teacher_epochs,
            ..self.train
        }
    }

    /// Every key in a fixed order, one `key = value` line each.
    pub fn to_text(&self) -> String {
        let d = &self.drr;
        let t = &self.train;
        let axis = match d.axis {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        };
        let transfer = match d.transfer {
            Transfer::Absorbed => "absorbed",
            Transfer::NegLogTransmittance => "neglog",
        };
        let reduction = match t.reduction {
            Reduction::Mean => "mean",
            Reduction::Sum => "sum",
        };
        let entries: Vec<(&str, String)> = vec![
            ("preset", self.preset.clone()),
            ("seed", self.seed.to_string()),
            ("n_train", self.n_train.to_string()),
            ("n_test", self.n_test.to_string()),
            ("dims", join(&self.dims)),
            ("spacing_mm", join(&self.spacing_mm)),
            ("prevalence", self.prevalence.to_string()),
            ("mu_water", d.mu_water.to_string()),
            ("image_size", d.out_size.to_string()),
            ("projection_axis", axis.into()),
            ("transfer", transfer.into()),
            ("embed_dim", self.embed_dim.to_string()),
            ("patch", self.student.patch.to_string()),
            ("patch_hidden", self.student.patch_hidden.to_string()),
            ("hidden", self.student.hidden.to_string()),
            ("tau", t.tau.to_string()),
            ("lr", t.lr.to_string()),
            ("teacher_lr", self.teacher_lr.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("epochs", t.epochs.to_string()),
            ("teacher_epochs", self.teacher_epochs.to_string()),
            ("weight_decay", t.weight_decay.to_string()),
            ("adam_beta1", t.adam_beta1.to_string()),
            ("adam_beta2", t.adam_beta2.to_string()),
            ("adam_eps", t.adam_eps.to_string()),
            ("reduction", reduction.into()),
            ("zeroshot_tau", self.zeroshot_tau.to_string()),
            ("probe_lr", self.probe.lr.to_string()),
            ("probe_epochs", self.probe.epochs.to_string()),
            ("probe_l2", self.probe.l2.to_string()),
            ("fewshot_fractions", join(&self.fewshot_fractions)),
            ("ablation_fraction", self.ablation_fraction.to_string()),
            ("recall_ks", join(&self.recall_ks)),
        ];
        let mut out = String::new();
        for (k, v) in entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.to_text().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_validate() {
        let desk = RunConfig::preset("desk").unwrap();
        desk.validate().unwrap();
        assert_eq!(desk.n_train, 512);
        assert_eq!(desk.train.lr, 3e-3);
        let paper = RunConfig::preset("paper").unwrap();
        assert_eq!(paper.train.lr, 5e-5);
        assert_eq!(paper.train.batch_size, 360);
        assert_eq!(paper.embed_dim, 512);
        assert!(RunConfig::preset("huge").is_err());
    }

    #[test]
    fn text_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("lr", "0.01").unwrap();
        let mut back = RunConfig::blank();
        back.apply_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn rejects_unknown_and_malformed_keys() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply_assignment("learning_rate = 1").unwrap_err();
        assert!(err.to_string().contains("learning_rate"));
        let err = cfg.apply_assignment("epochs = many").unwrap_err();
        assert!(err.to_string().contains("epochs"));
        cfg.set("ablation_fraction", "1.5").unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("ablation_fraction"));
    }
}
