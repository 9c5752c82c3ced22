//! Pipeline steps behind the subcommands. Each step reads and writes the
//! artifact layout below, so steps can run in separate processes:
//!
//! ```text
//! data/    manifest.jsonl label_space.json volumes/ radiographs/ config.cfg hashes.json
//! teacher/ teacher.ckpt teacher_loss.csv teacher.json config.cfg
//! student/ student.ckpt student_loss.csv student.json config.cfg
//! eval/    metrics_<task>.csv <task>_summary.json
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Value};
use x2ct_core::contrastive::{
    init_student, train_stage1_teachers, train_stage2_student, LossWeights, StudentData, Teachers, TrainLog,
};
use x2ct_core::drr::{project_ap, Radiograph};
use x2ct_core::encoders::{image_patches, volume_features, Parameterized, RadiographEncoder, Vocab, VOLUME_FEATURES};
use x2ct_core::eval::{
    iterative_stratified_sample, macro_metrics, match_ranks, recall_at, train_linear_probe, zero_shot_scores,
    Direction, MacroMetrics, MetricReport,
};
use x2ct_core::io::{sha256_file, sha256_hex, write_atomic};
use x2ct_core::phantom::{generate_dataset_with, read_label_space, read_manifest, LabelSpace, MANIFEST_FILE};
use x2ct_core::{Checkpoint, Error, Result, Split, StudentConfig, Tensor, Triplet, Volume};

use crate::config::RunConfig;

pub const DATASET_NAME: &str = "phantom";
pub const TEACHER_FILE: &str = "teacher.ckpt";
pub const STUDENT_FILE: &str = "student.ckpt";
pub const CONFIG_FILE: &str = "config.cfg";

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format("json", e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn write_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    write_atomic(&dir.join(CONFIG_FILE), cfg.to_text().as_bytes())
}

fn is_non_empty_dir(dir: &Path) -> bool {
    fs::read_dir(dir).map(|mut d| d.next().is_some()).unwrap_or(false)
}

/// sha256 of every file under `dir` except `skip`, keyed by relative path.
pub fn hash_tree(dir: &Path, skip: &[&str]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path.strip_prefix(dir).expect("under dir").to_string_lossy().replace('\\', "/");
            if skip.contains(&rel.as_str()) {
                continue;
            }
            out.insert(rel, sha256_file(&path)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct GenSummary {
    pub triplets: usize,
    pub dir_hash: String,
}

/// Generates volumes, reports and radiographs into `out_dir`.
pub fn gen(cfg: &RunConfig, out_dir: &Path, force: bool) -> Result<GenSummary> {
    cfg.validate()?;
    if is_non_empty_dir(out_dir) && !force {
        return Err(Error::config(
            "out",
            format!("{} exists and is not empty (pass --force to overwrite)", out_dir.display()),
        ));
    }
    let gen_cfg = cfg.gen_config()?;
    let triplets = generate_dataset_with(&gen_cfg, out_dir, |t: &Triplet, v: &Volume| {
        project_ap(v, &cfg.drr, &t.id)?.write(&out_dir.join(t.radiograph_ref()))
    })?;
    write_config(out_dir, cfg)?;
    let files = hash_tree(out_dir, &["hashes.json"])?;
    let dir_hash = sha256_hex(serde_json::to_string(&files).expect("map serializes").as_bytes());
    write_json(
        &out_dir.join("hashes.json"),
        &json!({ "config_hash": cfg.hash(), "dir_hash": dir_hash, "files": files }),
    )?;
    Ok(GenSummary {
        triplets: triplets.len(),
        dir_hash,
    })
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub label_space: LabelSpace,
    pub triplets: Vec<Triplet>,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        Ok(Self {
            dir: dir.to_path_buf(),
            label_space: read_label_space(dir)?,
            triplets: read_manifest(&dir.join(MANIFEST_FILE))?,
        })
    }

    pub fn split(&self, split: Split) -> Vec<&Triplet> {
        self.triplets.iter().filter(|t| t.split == split).collect()
    }

    pub fn manifest_hash(&self) -> Result<String> {
        sha256_file(&self.dir.join(MANIFEST_FILE))
    }
}

/// Model inputs for one split, rows aligned with `ids`.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub ids: Vec<String>,
    pub labels: Vec<Vec<u8>>,
    pub volume_features: Tensor,
    pub report_counts: Tensor,
    pub patches: Tensor,
    pub patches_per_image: usize,
}

impl SplitData {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn student_data(&self) -> StudentData<'_> {
        StudentData {
            volume_features: &self.volume_features,
            report_counts: &self.report_counts,
            patches: &self.patches,
            patches_per_image: self.patches_per_image,
        }
    }
}

pub fn load_split(ds: &Dataset, split: Split, student: &StudentConfig) -> Result<SplitData> {
    let items = ds.split(split);
    if items.is_empty() {
        return Err(Error::format("manifest", format!("no {split:?} items")));
    }
    let vocab = Vocab::from_label_space(&ds.label_space);
    let loaded = items
        .par_iter()
        .map(|t| {
            let volume = Volume::read(&ds.dir.join(&t.volume_ref))?;
            let image = Radiograph::read(&ds.dir.join(t.radiograph_ref()), t.id.as_str())?;
            let patches = image_patches(image.pixels(), image.width(), image.height(), student.patch)?;
            Ok((volume_features(&volume)?, patches, (image.width(), image.height())))
        })
        .collect::<Result<Vec<_>>>()?;
    let size = loaded[0].2;
    if loaded.iter().any(|l| l.2 != size) {
        return Err(Error::format("radiograph", "images differ in size"));
    }
    let n = items.len();
    let p2 = student.patch * student.patch;
    let per = student.patch_count(size.0, size.1);
    let mut feats = Vec::with_capacity(n * VOLUME_FEATURES);
    let mut patches = Vec::with_capacity(n * per * p2);
    for (f, p, _) in loaded {
        feats.extend(f);
        patches.extend(p);
    }
    let texts: Vec<&str> = items.iter().map(|t| t.report_text.as_str()).collect();
    Ok(SplitData {
        ids: items.iter().map(|t| t.id.clone()).collect(),
        labels: items.iter().map(|t| t.labels.clone()).collect(),
        volume_features: Tensor::new(vec![n, VOLUME_FEATURES], feats)?,
        report_counts: vocab.count_matrix(&texts),
        patches: Tensor::new(vec![n * per, p2], patches)?,
        patches_per_image: per,
    })
}

pub fn load_teachers(ds: &Dataset, path: &Path) -> Result<Teachers> {
    Teachers::from_checkpoint(&ds.label_space, &Checkpoint::read(path)?)
}

pub fn load_student(cfg: &StudentConfig, path: &Path) -> Result<RadiographEncoder> {
    let mut s = init_student(*cfg, 0)?;
    s.load_from(&Checkpoint::read(path)?)?;
    Ok(s)
}

/// Volume, report and radiograph embeddings of a split.
#[derive(Debug, Clone)]
pub struct Embedded {
    pub c: Tensor,
    pub r: Tensor,
    pub x: Tensor,
}

pub fn embed(data: &SplitData, teachers: &Teachers, student: &RadiographEncoder) -> Result<Embedded> {
    let ids = data.ids.clone();
    let c = teachers.volume.encode_features(ids.clone(), &data.volume_features)?.vectors;
    let r = teachers.report.encode_counts(ids, &data.report_counts)?.vectors;
    let mut tape = x2ct_core::Tape::new();
    let p = student.bind(&mut tape, false);
    let patches = tape.constant(data.patches.clone());
    let out = student.forward(&mut tape, &p, patches, data.patches_per_image)?;
    Ok(Embedded {
        c,
        r,
        x: tape.value(out).clone(),
    })
}

/// Mean cosine of matched (volume, report) pairs and of all mismatched pairs.
pub fn teacher_alignment(c: &Tensor, r: &Tensor) -> (f64, f64) {
    let n = c.shape()[0];
    let (mut matched, mut other) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let s: f64 = c.row(i).iter().zip(r.row(j)).map(|(a, b)| a * b).sum();
            if i == j {
                matched += s;
            } else {
                other += s;
            }
        }
    }
    (matched / n as f64, other / (n * (n - 1)) as f64)
}

#[derive(Debug, Clone)]
pub struct TeacherRun {
    pub teachers: Teachers,
    pub log: TrainLog,
    pub hash: String,
    pub alignment: (f64, f64),
}

pub fn train_teacher_on(cfg: &RunConfig, ds: &Dataset, train: &SplitData, test: &SplitData) -> Result<TeacherRun> {
    let mut teachers = Teachers::init(&ds.label_space, cfg.embed_dim, cfg.seed);
    let log = train_stage1_teachers(&train.volume_features, &train.report_counts, &mut teachers, &cfg.teacher_train())?;
    let ids = test.ids.clone();
    let c = teachers.volume.encode_features(ids.clone(), &test.volume_features)?.vectors;
    let r = teachers.report.encode_counts(ids, &test.report_counts)?.vectors;
    let alignment = teacher_alignment(&c, &r);
    let hash = teachers.hash();
    Ok(TeacherRun {
        teachers,
        log,
        hash,
        alignment,
    })
}

pub fn save_teacher(cfg: &RunConfig, ds: &Dataset, run: &TeacherRun, out_dir: &Path) -> Result<PathBuf> {
    let path = out_dir.join(TEACHER_FILE);
    run.teachers.checkpoint().write(&path)?;
    write_atomic(&out_dir.join("teacher_loss.csv"), run.log.to_csv().as_bytes())?;
    write_config(out_dir, cfg)?;
    write_json(
        &out_dir.join("teacher.json"),
        &json!({
            "config_hash": cfg.hash(),
            "manifest_hash": ds.manifest_hash()?,
            "teacher_hash": run.hash,
            "teacher_file_hash": sha256_file(&path)?,
            "test_matched_cosine": run.alignment.0,
            "test_mismatched_cosine": run.alignment.1,
        }),
    )?;
    Ok(path)
}

/// `train teacher`.
pub fn train_teacher(cfg: &RunConfig, data_dir: &Path, out_dir: &Path) -> Result<TeacherRun> {
    cfg.validate()?;
    let ds = Dataset::open(data_dir)?;
    let train = load_split(&ds, Split::Train, &cfg.student)?;
    let test = load_split(&ds, Split::Test, &cfg.student)?;
    let run = train_teacher_on(cfg, &ds, &train, &test)?;
    save_teacher(cfg, &ds, &run, out_dir)?;
    Ok(run)
}

#[derive(Debug, Clone)]
pub struct StudentRun {
    pub student: RadiographEncoder,
    pub log: TrainLog,
    pub teacher_hash_before: String,
    pub teacher_hash_after: String,
}

pub fn train_student_on(
    cfg: &RunConfig,
    train: &SplitData,
    teachers: &Teachers,
    weights: LossWeights,
) -> Result<StudentRun> {
    let before = teachers.hash();
    let mut student = init_student(cfg.student, cfg.seed)?;
    let log = train_stage2_student(train.student_data(), teachers, &mut student, &cfg.train, weights)?;
    Ok(StudentRun {
        student,
        log,
        teacher_hash_before: before,
        teacher_hash_after: teachers.hash(),
    })
}

/// `train student`. The teacher checkpoint file is hashed before and after;
/// any difference is a freeze violation.
pub fn train_student(
    cfg: &RunConfig,
    data_dir: &Path,
    teacher_path: &Path,
    weights: LossWeights,
    out_dir: &Path,
) -> Result<StudentRun> {
    cfg.validate()?;
    if !teacher_path.is_file() {
        return Err(Error::format(
            "teacher checkpoint",
            format!("{} not found (run `train teacher` first)", teacher_path.display()),
        ));
    }
    let file_before = sha256_file(teacher_path)?;
    let ds = Dataset::open(data_dir)?;
    let teachers = load_teachers(&ds, teacher_path)?;
    let train = load_split(&ds, Split::Train, &cfg.student)?;
    let run = train_student_on(cfg, &train, &teachers, weights)?;
    let file_after = sha256_file(teacher_path)?;
    if file_before != file_after {
        return Err(Error::FreezeViolation {
            expected: file_before,
            actual: file_after,
        });
    }
    let path = out_dir.join(STUDENT_FILE);
    run.student.to_checkpoint().write(&path)?;
    write_atomic(&out_dir.join("student_loss.csv"), run.log.to_csv().as_bytes())?;
    write_config(out_dir, cfg)?;
    write_json(
        &out_dir.join("student.json"),
        &json!({
            "config_hash": cfg.hash(),
            "manifest_hash": ds.manifest_hash()?,
            "weights": { "alpha": weights.alpha, "beta": weights.beta, "gamma": weights.gamma },
            "teacher_file_hash_before": file_before,
            "teacher_file_hash_after": file_after,
            "teacher_hash": run.teacher_hash_after,
            "student_hash": run.student.to_checkpoint().hash(),
        }),
    )?;
    Ok(run)
}

/// R_k for X->C and X->R on a split.
pub fn retrieval_report(cfg: &RunConfig, emb: &Embedded) -> Result<MetricReport> {
    let truth: Vec<usize> = (0..emb.x.shape()[0]).collect();
    let mut report = MetricReport::default();
    for (dir, gallery) in [(Direction::XtoC, &emb.c), (Direction::XtoR, &emb.r)] {
        let ranks = match_ranks(&emb.x, gallery, &truth)?;
        for &k in &cfg.recall_ks {
            if k > truth.len() {
                return Err(Error::config("recall_ks", format!("k={k} exceeds the gallery size")));
            }
            report.push("retrieval", DATASET_NAME, &dir.to_string(), "recall", recall_at(&ranks, k), k, cfg.seed);
        }
    }
    Ok(report)
}

fn push_macro(report: &mut MetricReport, task: &str, m: &MacroMetrics, k_or_fraction: &str, seed: u64) {
    for l in &m.per_label {
        match (l.auc, l.pr_auc) {
            (Some(a), Some(p)) => {
                report.push(task, DATASET_NAME, &l.label, "auc", a, k_or_fraction, seed);
                report.push(task, DATASET_NAME, &l.label, "pr_auc", p, k_or_fraction, seed);
            }
            _ => report.push(task, DATASET_NAME, &l.label, "skipped", f64::NAN, k_or_fraction, seed),
        }
    }
    report.push(task, DATASET_NAME, "macro", "auc", m.macro_auc, k_or_fraction, seed);
    report.push(task, DATASET_NAME, "macro", "pr_auc", m.macro_pr_auc, k_or_fraction, seed);
}

pub fn zeroshot_report(
    cfg: &RunConfig,
    ds: &Dataset,
    test: &SplitData,
    emb: &Embedded,
    teachers: &Teachers,
) -> Result<(MetricReport, MacroMetrics)> {
    let scores = zero_shot_scores(&emb.x, &ds.label_space, &teachers.report, cfg.zeroshot_tau)?;
    let m = macro_metrics(&scores, &test.labels, ds.label_space.names())?;
    let mut report = MetricReport::default();
    push_macro(&mut report, "zeroshot", &m, "-", cfg.seed);
    Ok((report, m))
}

/// Linear probe on a stratified `fraction` of the train split, scored on the
/// test split.
pub fn fewshot_metrics(
    cfg: &RunConfig,
    ds: &Dataset,
    train: (&SplitData, &Tensor),
    test: (&SplitData, &Tensor),
    fraction: f64,
    seed: u64,
) -> Result<MacroMetrics> {
    let (train_data, train_x) = train;
    let (test_data, test_x) = test;
    let idx = iterative_stratified_sample(&train_data.labels, fraction, seed)?;
    let d = train_x.shape()[1];
    let rows: Vec<f64> = idx.iter().flat_map(|&i| train_x.row(i).to_vec()).collect();
    let x = Tensor::new(vec![idx.len(), d], rows)?;
    let y: Vec<Vec<u8>> = idx.iter().map(|&i| train_data.labels[i].clone()).collect();
    let fit = train_linear_probe(&x, &y, &cfg.probe)?;
    let scores = fit.head.predict(test_x)?;
    macro_metrics(&scores, &test_data.labels, ds.label_space.names())
}

pub fn fewshot_report(m: &MacroMetrics, fraction: f64, seed: u64) -> MetricReport {
    let mut report = MetricReport::default();
    push_macro(&mut report, "fewshot", m, &fraction.to_string(), seed);
    report
}

fn summary(cfg: &RunConfig, task: &str, inputs: Value, report: &MetricReport) -> Value {
    let metrics: Vec<Value> = report
        .rows
        .iter()
        .filter(|r| r.direction_or_label == "macro" || r.task == "retrieval")
        .map(|r| {
            json!({
                "direction_or_label": r.direction_or_label,
                "metric": r.metric,
                "k_or_fraction": r.k_or_fraction,
                "value": r.value,
            })
        })
        .collect();
    json!({ "task": task, "config_hash": cfg.hash(), "inputs": inputs, "headline": metrics })
}

pub fn save_report(cfg: &RunConfig, out_dir: &Path, task: &str, inputs: Value, report: &MetricReport) -> Result<()> {
    write_atomic(&out_dir.join(format!("metrics_{task}.csv")), report.to_csv().as_bytes())?;
    write_json(&out_dir.join(format!("{task}_summary.json")), &summary(cfg, task, inputs, report))?;
    write_config(out_dir, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvalTask {
    Retrieval,
    ZeroShot,
    FewShot { fraction: f64, seed: u64 },
}

/// `eval`. Without a student checkpoint the student is the untrained
/// initialization for `cfg.seed`.
pub fn eval(
    cfg: &RunConfig,
    data_dir: &Path,
    teacher_path: &Path,
    student_path: Option<&Path>,
    task: EvalTask,
    out_dir: &Path,
) -> Result<MetricReport> {
    cfg.validate()?;
    let ds = Dataset::open(data_dir)?;
    let teachers = load_teachers(&ds, teacher_path)?;
    let student = match student_path {
        Some(p) => load_student(&cfg.student, p)?,
        None => init_student(cfg.student, cfg.seed)?,
    };
    let test = load_split(&ds, Split::Test, &cfg.student)?;
    let test_emb = embed(&test, &teachers, &student)?;
    let inputs = json!({
        "manifest": ds.manifest_hash()?,
        "teacher": sha256_file(teacher_path)?,
        "student": match student_path {
            Some(p) => sha256_file(p)?,
            None => format!("untrained(seed={})", cfg.seed),
        },
    });
    let (name, report) = match task {
        EvalTask::Retrieval => ("retrieval", retrieval_report(cfg, &test_emb)?),
        EvalTask::ZeroShot => ("zeroshot", zeroshot_report(cfg, &ds, &test, &test_emb, &teachers)?.0),
        EvalTask::FewShot { fraction, seed } => {
            let train = load_split(&ds, Split::Train, &cfg.student)?;
            let train_emb = embed(&train, &teachers, &student)?;
            let m = fewshot_metrics(cfg, &ds, (&train, &train_emb.x), (&test, &test_emb.x), fraction, seed)?;
            ("fewshot", fewshot_report(&m, fraction, seed))
        }
    };
    save_report(cfg, out_dir, name, inputs, &report)?;
    Ok(report)
}

pub const ABLATION_ARMS: [(f64, f64); 3] = [(1.0, 0.0), (0.0, 1.0), (1.0, 1.0)];

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub beta: f64,
    pub gamma: f64,
    pub ft_auc: f64,
    pub ft_pr: f64,
    /// X->R recall at each configured k.
    pub report_recall: Vec<f64>,
    /// X->C recall at each configured k.
    pub volume_recall: Vec<f64>,
}

pub fn ablation_csv(ks: &[usize], rows: &[AblationRow]) -> String {
    let mut out = String::from("beta,gamma,ft_auc,ft_pr");
    for prefix in ["report", "volume"] {
        for k in ks {
            out.push_str(&format!(",{prefix}_r{k}"));
        }
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{},{}", r.beta, r.gamma, r.ft_auc, r.ft_pr));
        for v in r.report_recall.iter().chain(&r.volume_recall) {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// One ablation arm on preloaded data.
pub fn ablation_arm(
    cfg: &RunConfig,
    ds: &Dataset,
    train: &SplitData,
    test: &SplitData,
    teachers: &Teachers,
    (beta, gamma): (f64, f64),
) -> Result<(AblationRow, StudentRun)> {
    let weights = LossWeights::new(0.0, beta, gamma)?;
    let run = train_student_on(cfg, train, teachers, weights)?;
    let test_emb = embed(test, teachers, &run.student)?;
    let train_emb = embed(train, teachers, &run.student)?;
    let ft = fewshot_metrics(cfg, ds, (train, &train_emb.x), (test, &test_emb.x), cfg.ablation_fraction, cfg.seed)?;
    let rec = retrieval_report(cfg, &test_emb)?;
    let pick = |dir: Direction| -> Vec<f64> {
        cfg.recall_ks
            .iter()
            .map(|k| rec.find(&dir.to_string(), "recall", &k.to_string()).unwrap_or(f64::NAN))
            .collect()
    };
    Ok((
        AblationRow {
            beta,
            gamma,
            ft_auc: ft.macro_auc,
            ft_pr: ft.macro_pr_auc,
            report_recall: pick(Direction::XtoR),
            volume_recall: pick(Direction::XtoC),
        },
        run,
    ))
}

/// `ablate`: the three (beta, gamma) arms with a shared seed. Trains the
/// teachers first unless a checkpoint is given.
pub fn ablate(cfg: &RunConfig, data_dir: &Path, teacher_path: Option<&Path>, out_dir: &Path) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    let ds = Dataset::open(data_dir)?;
    let train = load_split(&ds, Split::Train, &cfg.student)?;
    let test = load_split(&ds, Split::Test, &cfg.student)?;
    let teachers = match teacher_path {
        Some(p) => load_teachers(&ds, p)?,
        None => {
            let run = train_teacher_on(cfg, &ds, &train, &test)?;
            save_teacher(cfg, &ds, &run, &out_dir.join("teacher"))?;
            run.teachers
        }
    };
    let mut rows = Vec::new();
    for arm in ABLATION_ARMS {
        let (row, run) = ablation_arm(cfg, &ds, &train, &test, &teachers, arm)?;
        let arm_dir = out_dir.join(format!("arm_b{}_g{}", arm.0, arm.1));
        run.student.to_checkpoint().write(&arm_dir.join(STUDENT_FILE))?;
        write_atomic(&arm_dir.join("student_loss.csv"), run.log.to_csv().as_bytes())?;
        rows.push(row);
    }
    write_atomic(&out_dir.join("ablation.csv"), ablation_csv(&cfg.recall_ks, &rows).as_bytes())?;
    write_config(out_dir, cfg)?;
    write_json(
        &out_dir.join("ablation_summary.json"),
        &json!({
            "config_hash": cfg.hash(),
            "manifest_hash": ds.manifest_hash()?,
            "teacher_hash": teachers.hash(),
            "arms": rows.len(),
        }),
    )?;
    Ok(rows)
}

/// Reads a `label,score` CSV with a header row.
pub fn read_scores(path: &Path) -> Result<(Vec<u8>, Vec<f64>)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::format("score csv", e.to_string()))?;
    let (mut labels, mut scores) = (Vec::new(), Vec::new());
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::format("score csv", e.to_string()))?;
        let bad = || Error::format("score csv", format!("{}: row {} needs label,score", path.display(), i + 1));
        let label: u8 = rec.get(0).and_then(|v| v.trim().parse().ok()).ok_or_else(bad)?;
        let score: f64 = rec.get(1).and_then(|v| v.trim().parse().ok()).ok_or_else(bad)?;
        labels.push(label);
        scores.push(score);
    }
    Ok((labels, scores))
}

/// Everything a full default run produces, kept in memory for inspection.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub teacher: TeacherRun,
    pub student: StudentRun,
    pub retrieval: MetricReport,
    pub zeroshot: MetricReport,
    pub zeroshot_macro: MacroMetrics,
    pub fewshot: Vec<(f64, MacroMetrics)>,
    /// Concatenation of every metric CSV written by the run.
    pub metrics_csv: String,
}

/// gen, train teacher, train student and every eval task under `root`,
/// using the same artifact layout as the individual commands.
pub fn run_pipeline(cfg: &RunConfig, root: &Path, fractions: &[f64]) -> Result<PipelineRun> {
    cfg.validate()?;
    let data_dir = root.join("data");
    gen(cfg, &data_dir, true)?;
    let ds = Dataset::open(&data_dir)?;
    let train = load_split(&ds, Split::Train, &cfg.student)?;
    let test = load_split(&ds, Split::Test, &cfg.student)?;

    let teacher = train_teacher_on(cfg, &ds, &train, &test)?;
    let teacher_path = save_teacher(cfg, &ds, &teacher, &root.join("teacher"))?;
    let teacher_file = sha256_file(&teacher_path)?;
    let teachers = load_teachers(&ds, &teacher_path)?;

    let student = train_student_on(cfg, &train, &teachers, LossWeights::STUDENT)?;
    if sha256_file(&teacher_path)? != teacher_file {
        return Err(Error::FreezeViolation {
            expected: teacher_file,
            actual: sha256_file(&teacher_path)?,
        });
    }
    let student_dir = root.join("student");
    student.student.to_checkpoint().write(&student_dir.join(STUDENT_FILE))?;
    write_atomic(&student_dir.join("student_loss.csv"), student.log.to_csv().as_bytes())?;

    let eval_dir = root.join("eval");
    let test_emb = embed(&test, &teachers, &student.student)?;
    let train_emb = embed(&train, &teachers, &student.student)?;
    let inputs = json!({ "manifest": ds.manifest_hash()?, "teacher": teacher_file });

    let retrieval = retrieval_report(cfg, &test_emb)?;
    save_report(cfg, &eval_dir, "retrieval", inputs.clone(), &retrieval)?;
    let (zeroshot, zeroshot_macro) = zeroshot_report(cfg, &ds, &test, &test_emb, &teachers)?;
    save_report(cfg, &eval_dir, "zeroshot", inputs.clone(), &zeroshot)?;
    let mut metrics_csv = retrieval.to_csv() + &zeroshot.to_csv();
    let mut fewshot = Vec::new();
    for &f in fractions {
        let m = fewshot_metrics(cfg, &ds, (&train, &train_emb.x), (&test, &test_emb.x), f, cfg.seed)?;
        let report = fewshot_report(&m, f, cfg.seed);
        save_report(cfg, &eval_dir.join(format!("fewshot_{f}")), "fewshot", inputs.clone(), &report)?;
        metrics_csv.push_str(&report.to_csv());
        fewshot.push((f, m));
    }
    Ok(PipelineRun {
        teacher,
        student,
        retrieval,
        zeroshot,
        zeroshot_macro,
        fewshot,
        metrics_csv,
    })
}
