//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p x2ct --test acceptance`. The process fails if any
//! criterion fails, except those listed in `KNOWN_FAILURES`.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use common::{
    auc_pairs, average_precision_brute, delong_naive, info_nce_loops, paired_scores, permutation_p, random_unit_rows,
    x2ct_loops,
};
use x2ct_cli::config::RunConfig;
use x2ct_cli::workflow::{self, Dataset, PipelineRun};
use x2ct_core::contrastive::{info_nce_value, init_student, x2ct_loss, LossWeights};
use x2ct_core::diagnostics::{check_ops, check_student_loss};
use x2ct_core::eval::{auc, delong_covariance, delong_test, match_ranks, pr_auc, recall_at, Direction};
use x2ct_core::io::sha256_file;
use x2ct_core::{Reduction, Split, SplitMix64, Tape, Tensor};

/// Criteria expected to fail, with the reason. See the README.
const KNOWN_FAILURES: &[(u32, &str)] = &[(
    3,
    "the stated value 0.474077 is ln(1 + e^-0.5); the loss definition gives -ln(e/(e+3)) = 0.7436683806",
)];

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

type Check = Result<Outcome, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn gradient_fidelity() -> Check {
    const TOL: f64 = 1e-4;
    const SEEDS: usize = 20;
    let start = Instant::now();
    let mut worst_op = (0.0f64, "");
    for seed in 0..SEEDS as u64 {
        for (name, report) in check_ops(seed).map_err(err)? {
            if report.max_rel_error > worst_op.0 {
                worst_op = (report.max_rel_error, name);
            }
        }
    }
    // Seeds that land a relu input on its kink are skipped, so keep drawing
    // until enough have been checked.
    let (mut checked, mut worst_loss, mut seed) = (0, 0.0f64, 0u64);
    while checked < SEEDS && seed < 1000 {
        if let Some(r) = check_student_loss(seed, LossWeights::STUDENT).map_err(err)? {
            worst_loss = worst_loss.max(r.max_rel_error);
            checked += 1;
        }
        seed += 1;
    }
    let elapsed = start.elapsed();
    Ok(Outcome::new(
        worst_op.0 < TOL && worst_loss < TOL && checked == SEEDS && elapsed < Duration::from_secs(60),
        format!(
            "worst op rel err {:.2e} ({}), x2ct_loss wrt student {:.2e} over {checked} seeds, {:.1}s",
            worst_op.0,
            worst_op.1,
            worst_loss,
            elapsed.as_secs_f64()
        ),
    ))
}

fn loss_oracles() -> Check {
    const TOL: f64 = 1e-12;
    let mut rng = SplitMix64::new(100);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = 2 + rng.below(15) as usize;
        let d = 4 + rng.below(29) as usize;
        let (c, r, x) = (
            random_unit_rows(&mut rng, n, d),
            random_unit_rows(&mut rng, n, d),
            random_unit_rows(&mut rng, n, d),
        );
        let nce = info_nce_value(&x, &r, 0.07, Reduction::Mean).map_err(err)?;
        worst = worst.max((nce - info_nce_loops(&x, &r, 0.07, true)).abs());
        let w = [rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0)];
        let mut tape = Tape::new();
        let (cn, rn, xn) = (tape.constant(c.clone()), tape.constant(r.clone()), tape.constant(x.clone()));
        let weights = LossWeights::new(w[0], w[1], w[2]).map_err(err)?;
        let terms = x2ct_loss(&mut tape, cn, rn, xn, weights, 0.07, Reduction::Mean).map_err(err)?;
        let got = tape.value(terms.total).item().map_err(err)?;
        worst = worst.max((got - x2ct_loops(&c, &r, &x, w, 0.07, true)).abs());
    }
    Ok(Outcome::new(worst <= TOL, format!("max |diff| {worst:.2e} over 100 batches")))
}

fn closed_form_values() -> Check {
    let mut worst_log_n = 0.0f64;
    for n in 2..=16 {
        let row = vec![0.6, 0.8, 0.0];
        let same = Tensor::from_rows(&vec![row; n]).map_err(err)?;
        let l = info_nce_value(&same, &same, 0.07, Reduction::Mean).map_err(err)?;
        worst_log_n = worst_log_n.max((l - (n as f64).ln()).abs());
    }
    let eye: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    let eye = Tensor::from_rows(&eye).map_err(err)?;
    let ortho = info_nce_value(&eye, &eye, 1.0, Reduction::Mean).map_err(err)?;
    const STATED: f64 = 0.474077;
    let log_n_ok = worst_log_n <= 1e-12;
    let ortho_ok = (ortho - STATED).abs() <= 1e-6;
    Ok(Outcome::new(
        log_n_ok && ortho_ok,
        format!(
            "constant logits vs log n max |diff| {worst_log_n:.1e} ({}); orthogonal n=4 tau=1 gives {ortho:.10}, expected {STATED} +/- 1e-6 ({})",
            if log_n_ok { "ok" } else { "off" },
            if ortho_ok { "ok" } else { "off" },
        ),
    ))
}

fn metric_oracles() -> Check {
    let mut rng = SplitMix64::new(400);
    let (mut auc_exact, mut ap_worst) = (true, 0.0f64);
    for n in [2usize, 7, 50, 120, 200] {
        for _ in 0..10 {
            let s: Vec<f64> = (0..n).map(|_| rng.below(9) as f64).collect();
            let mut y: Vec<u8> = (0..n).map(|_| u8::from(rng.bernoulli(0.35))).collect();
            y[0] = 1;
            y[n - 1] = 0;
            auc_exact &= auc(&s, &y).map_err(err)? == auc_pairs(&s, &y);
            ap_worst = ap_worst.max((pr_auc(&s, &y).map_err(err)? - average_precision_brute(&s, &y)).abs());
        }
    }
    let mut cov_worst = 0.0f64;
    for seed in 0..10 {
        let (a, b, y) = paired_scores(seed, 100, 0.3);
        let (_, fast) = delong_covariance(&a, &b, &y).map_err(err)?;
        let naive = delong_naive(&a, &b, &y);
        for i in 0..2 {
            for j in 0..2 {
                cov_worst = cov_worst.max((fast[i][j] - naive[i][j]).abs());
            }
        }
    }
    let mut p_worst = 0.0f64;
    for (seed, gap) in [(1, 0.3), (2, 0.5), (3, 0.15)] {
        let (a, b, y) = paired_scores(seed, 100, gap);
        let d = delong_test(&a, &b, &y).map_err(err)?;
        p_worst = p_worst.max((d.p_two_tailed - permutation_p(&a, &b, &y, 20_000, 99 + seed)).abs());
    }
    Ok(Outcome::new(
        auc_exact && ap_worst < 1e-12 && cov_worst < 1e-10 && p_worst <= 0.05,
        format!(
            "auc exact: {auc_exact}; pr_auc |diff| {ap_worst:.1e}; delong cov |diff| {cov_worst:.1e}; p vs permutation |diff| {p_worst:.3}"
        ),
    ))
}

/// Shared state for the pipeline criteria.
struct Pipeline {
    cfg: RunConfig,
    root: tempfile::TempDir,
    first: PipelineRun,
    second: PipelineRun,
    second_root: tempfile::TempDir,
    elapsed: Duration,
}

impl Pipeline {
    fn run() -> Result<Self, String> {
        let cfg = RunConfig::preset("desk").map_err(err)?;
        let fractions = [0.2, 0.5];
        let root = tempfile::tempdir().map_err(err)?;
        let start = Instant::now();
        let first = workflow::run_pipeline(&cfg, root.path(), &fractions).map_err(err)?;
        let elapsed = start.elapsed();
        let second_root = tempfile::tempdir().map_err(err)?;
        let second = workflow::run_pipeline(&cfg, second_root.path(), &fractions).map_err(err)?;
        Ok(Self {
            cfg,
            root,
            first,
            second,
            second_root,
            elapsed,
        })
    }

    fn data_dir(&self) -> std::path::PathBuf {
        self.root.path().join("data")
    }

    fn teacher_path(&self) -> std::path::PathBuf {
        self.root.path().join("teacher").join(workflow::TEACHER_FILE)
    }
}

fn recall(report: &x2ct_core::eval::MetricReport, dir: Direction, k: usize) -> f64 {
    report.find(&dir.to_string(), "recall", &k.to_string()).unwrap_or(f64::NAN)
}

fn retrieval_sanity(p: &Pipeline) -> Check {
    let ds = Dataset::open(&p.data_dir()).map_err(err)?;
    let test = workflow::load_split(&ds, Split::Test, &p.cfg.student).map_err(err)?;
    let teachers = workflow::load_teachers(&ds, &p.teacher_path()).map_err(err)?;
    let n = test.len();
    let truth: Vec<usize> = (0..n).collect();
    let ks = &p.cfg.recall_ks;
    let mut mean = vec![[0.0f64; 2]; ks.len()];
    const SEEDS: u64 = 10;
    for seed in 0..SEEDS {
        let student = init_student(p.cfg.student, 1000 + seed).map_err(err)?;
        let emb = workflow::embed(&test, &teachers, &student).map_err(err)?;
        for (d, gallery) in [&emb.c, &emb.r].into_iter().enumerate() {
            let ranks = match_ranks(&emb.x, gallery, &truth).map_err(err)?;
            for (i, &k) in ks.iter().enumerate() {
                mean[i][d] += recall_at(&ranks, k) / SEEDS as f64;
            }
        }
    }
    let mut untrained_ok = true;
    let mut parts = Vec::new();
    for (i, &k) in ks.iter().enumerate() {
        let base = k as f64 / n as f64;
        for m in mean[i] {
            untrained_ok &= m >= base / 3.0 && m <= 3.0 * base;
        }
        parts.push(format!("R{k} {:.3}/{:.3} vs {base:.3}", mean[i][0], mean[i][1]));
    }
    let floor = 5.0 * 5.0 / n as f64;
    let xc = recall(&p.first.retrieval, Direction::XtoC, 5);
    let xr = recall(&p.first.retrieval, Direction::XtoR, 5);
    let trained_ok = xc >= floor && xr >= floor;
    let fast = p.elapsed < Duration::from_secs(600);
    Ok(Outcome::new(
        untrained_ok && trained_ok && fast,
        format!(
            "untrained mean over {SEEDS} seeds (X->C/X->R): {}; trained R5 X->C {xc:.3}, X->R {xr:.3} (need >= {floor:.3}); pipeline {:.0}s",
            parts.join(", "),
            p.elapsed.as_secs_f64()
        ),
    ))
}

fn zero_shot(p: &Pipeline) -> Check {
    let m = &p.first.zeroshot_macro;
    let per: Vec<String> = m
        .per_label
        .iter()
        .map(|l| format!("{}={}", l.label, l.auc.map_or("skipped".to_string(), |a| format!("{a:.2}"))))
        .collect();
    Ok(Outcome::new(
        m.macro_auc >= 0.80,
        format!("macro AUC {:.3} (need >= 0.80); {}", m.macro_auc, per.join(" ")),
    ))
}

fn few_shot_ordering(p: &Pipeline) -> Check {
    let at = |f: f64| p.first.fewshot.iter().find(|(g, _)| *g == f).map(|(_, m)| m.macro_auc);
    let (Some(a20), Some(a50)) = (at(0.2), at(0.5)) else {
        return Err("fewshot fractions 0.2 and 0.5 missing".into());
    };
    Ok(Outcome::new(
        a50 >= a20 - 0.02,
        format!("FS@0.5 AUC {a50:.3} vs FS@0.2 {a20:.3} (need >= {:.3})", a20 - 0.02),
    ))
}

fn ablation_direction(p: &Pipeline) -> Check {
    let out = p.root.path().join("ablation");
    let teacher = p.teacher_path();
    let before = sha256_file(&teacher).map_err(err)?;
    let rows = workflow::ablate(&p.cfg, &p.data_dir(), Some(&teacher), &out).map_err(err)?;
    if sha256_file(&teacher).map_err(err)? != before {
        return Err("teacher checkpoint changed during ablation".into());
    }
    let arm = |b: f64, g: f64| rows.iter().find(|r| r.beta == b && r.gamma == g).ok_or("missing arm");
    let (only_r, only_c, both) = (arm(1.0, 0.0)?, arm(0.0, 1.0)?, arm(1.0, 1.0)?);
    let k5 = p.cfg.recall_ks.iter().position(|&k| k == 5).ok_or("recall_ks lacks 5")?;
    let volume_drop = only_r.volume_recall[k5] < both.volume_recall[k5];
    let report_drop = only_c.report_recall[k5] < both.report_recall[k5];
    let best_single = only_r.ft_auc.max(only_c.ft_auc);
    let gap = both.ft_auc - best_single;
    Ok(Outcome::new(
        rows.len() == 3 && volume_drop && report_drop && gap.abs() <= 0.02,
        format!(
            "volume R5 (1,0) {:.3} vs (1,1) {:.3}; report R5 (0,1) {:.3} vs (1,1) {:.3}; FT AUC (1,1) {:.3} vs best single {best_single:.3} (gap {gap:+.3})",
            only_r.volume_recall[k5], both.volume_recall[k5], only_c.report_recall[k5], both.report_recall[k5], both.ft_auc
        ),
    ))
}

fn freeze_contract(p: &Pipeline) -> Check {
    let s = &p.first.student;
    let recorded: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(p.root.path().join("teacher").join("teacher.json")).map_err(err)?,
    )
    .map_err(err)?;
    let file_now = sha256_file(&p.teacher_path()).map_err(err)?;
    let file_ok = recorded["teacher_file_hash"].as_str() == Some(file_now.as_str());
    let param_ok = s.teacher_hash_before == s.teacher_hash_after && s.teacher_hash_after == p.first.teacher.hash;
    Ok(Outcome::new(
        file_ok && param_ok,
        format!(
            "teacher params {} -> {}; checkpoint file hash {}",
            &s.teacher_hash_before[..12],
            &s.teacher_hash_after[..12],
            if file_ok { "unchanged" } else { "CHANGED" }
        ),
    ))
}

fn metric_files(root: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files: Vec<(String, Vec<u8>)> = workflow::hash_tree(&root.join("eval"), &[])
        .map_err(err)?
        .into_keys()
        .filter(|k| k.ends_with(".csv"))
        .map(|k| {
            let bytes = std::fs::read(root.join("eval").join(&k)).map_err(err)?;
            Ok((k, bytes))
        })
        .collect::<Result<_, String>>()?;
    files.sort();
    Ok(files)
}

fn determinism(p: &Pipeline) -> Check {
    let a = metric_files(p.root.path())?;
    let b = metric_files(p.second_root.path())?;
    let same = !a.is_empty() && a == b && p.first.metrics_csv == p.second.metrics_csv;
    Ok(Outcome::new(
        same,
        format!(
            "{} metric CSVs compared, {}",
            a.len(),
            if same { "byte-identical" } else { "DIFFER" }
        ),
    ))
}

fn main() {
    let mut results: Vec<(u32, &str, Check)> = vec![
        (1, "gradient fidelity", gradient_fidelity()),
        (2, "loss oracle equivalence", loss_oracles()),
        (3, "closed-form loss values", closed_form_values()),
        (4, "metric oracles", metric_oracles()),
    ];
    match Pipeline::run() {
        Ok(p) => {
            results.push((5, "retrieval sanity", retrieval_sanity(&p)));
            results.push((6, "zero-shot learnability", zero_shot(&p)));
            results.push((7, "few-shot ordering", few_shot_ordering(&p)));
            results.push((8, "ablation direction", ablation_direction(&p)));
            results.push((9, "freeze contract", freeze_contract(&p)));
            results.push((10, "determinism", determinism(&p)));
        }
        Err(e) => {
            for (id, name) in [
                (5, "retrieval sanity"),
                (6, "zero-shot learnability"),
                (7, "few-shot ordering"),
                (8, "ablation direction"),
                (9, "freeze contract"),
                (10, "determinism"),
            ] {
                results.push((id, name, Err(format!("pipeline failed: {e}"))));
            }
        }
    }

    let mut unexpected = 0;
    for (id, name, result) in &results {
        let known = KNOWN_FAILURES.iter().find(|(k, _)| k == id).map(|(_, why)| *why);
        let (pass, detail) = match result {
            Ok(o) => (o.pass, o.detail.clone()),
            Err(e) => (false, format!("error: {e}")),
        };
        let status = if pass { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} {status} {name}: {detail}");
        match (pass, known) {
            (false, Some(why)) => println!("             known failure: {why}"),
            (false, None) => unexpected += 1,
            _ => {}
        }
    }
    if unexpected > 0 {
        eprintln!("{unexpected} criteria failed");
        std::process::exit(1);
    }
}
