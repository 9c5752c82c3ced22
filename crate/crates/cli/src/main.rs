use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use x2ct_cli::config::RunConfig;
use x2ct_cli::workflow::{self, EvalTask};
use x2ct_cli::{exit_code, EXIT_CONFIG};
use x2ct_core::contrastive::LossWeights;
use x2ct_core::diagnostics::{check_ops, check_student_loss};
use x2ct_core::eval::delong_test;
use x2ct_core::Error;

#[derive(Parser)]
#[command(name = "x2ct", version, about = "Radiograph encoder distillation from CT and report teachers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Preset to start from.
    #[arg(long, default_value = "desk")]
    preset: String,
    /// Config file applied on top of the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra key=value overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::preset(&self.preset)?;
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for kv in &self.set {
            cfg.apply_assignment(kv)?;
        }
        if let Some(seed) = self.seed {
            cfg.set("seed", &seed.to_string())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate phantom volumes, reports and radiographs.
    Gen {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Overwrite a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Train the teachers or the student.
    Train {
        #[arg(value_enum)]
        stage: Stage,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Teacher checkpoint; required for the student stage.
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
    },
    /// Evaluate a student on the test split.
    Eval {
        #[arg(value_enum)]
        task: Task,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        teacher: PathBuf,
        /// Student checkpoint; the untrained initialization is used if absent.
        #[arg(long)]
        student: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Train-split fraction for fewshot.
        #[arg(long, default_value_t = 0.2)]
        fraction: f64,
        /// Sampling seed for fewshot; defaults to the config seed.
        #[arg(long = "sample-seed")]
        sample_seed: Option<u64>,
    },
    /// Run the three (beta, gamma) ablation arms.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        /// Reuse a teacher checkpoint instead of training one.
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Paired DeLong test on two `label,score` CSV files.
    Stats {
        a: PathBuf,
        b: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Stage {
    Teacher,
    Student,
}

#[derive(Clone, Copy, ValueEnum)]
enum Task {
    Retrieval,
    Zeroshot,
    Fewshot,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { cfg, out, force } => {
            let cfg = cfg.resolve()?;
            let s = workflow::gen(&cfg, &out, force)?;
            println!("generated {} triplets in {} (dir hash {})", s.triplets, out.display(), s.dir_hash);
        }
        Command::Train {
            stage,
            cfg,
            data,
            out,
            teacher,
            alpha,
            beta,
            gamma,
        } => {
            let cfg = cfg.resolve()?;
            match stage {
                Stage::Teacher => {
                    let run = workflow::train_teacher(&cfg, &data, &out)?;
                    println!(
                        "teacher hash {}; test cosine matched {:.4} vs mismatched {:.4}",
                        run.hash, run.alignment.0, run.alignment.1
                    );
                }
                Stage::Student => {
                    let teacher = teacher.unwrap_or_else(|| data.join("..").join("teacher").join(workflow::TEACHER_FILE));
                    let weights = LossWeights::new(alpha, beta, gamma)?;
                    let run = workflow::train_student(&cfg, &data, &teacher, weights, &out)?;
                    let last = run.log.rows.last().map(|r| r.value).unwrap_or(f64::NAN);
                    println!("student trained; final total loss {last:.6}; teacher hash unchanged {}", run.teacher_hash_after);
                }
            }
        }
        Command::Eval {
            task,
            cfg,
            data,
            teacher,
            student,
            out,
            fraction,
            sample_seed,
        } => {
            let cfg = cfg.resolve()?;
            let task = match task {
                Task::Retrieval => EvalTask::Retrieval,
                Task::Zeroshot => EvalTask::ZeroShot,
                Task::Fewshot => {
                    if !(fraction > 0.0 && fraction <= 1.0) {
                        return Err(Error::config("fraction", format!("{fraction} is not in (0, 1]")).into());
                    }
                    EvalTask::FewShot {
                        fraction,
                        seed: sample_seed.unwrap_or(cfg.seed),
                    }
                }
            };
            let report = workflow::eval(&cfg, &data, &teacher, student.as_deref(), task, &out)?;
            print!("{}", report.to_csv());
        }
        Command::Ablate { cfg, data, teacher, out } => {
            let cfg = cfg.resolve()?;
            let rows = workflow::ablate(&cfg, &data, teacher.as_deref(), &out)?;
            print!("{}", workflow::ablation_csv(&cfg.recall_ks, &rows));
        }
        Command::Gradcheck { seeds, tol } => gradcheck(seeds, tol)?,
        Command::Stats { a, b } => stats(&a, &b)?,
    }
    Ok(())
}

fn gradcheck(seeds: u64, tol: f64) -> Result<()> {
    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut record = |name: &str, err: f64| match worst.iter_mut().find(|(n, _)| n == name) {
        Some(w) => w.1 = w.1.max(err),
        None => worst.push((name.to_string(), err)),
    };
    for seed in 0..seeds {
        for (name, report) in check_ops(seed)? {
            record(name, report.max_rel_error);
        }
        if let Some(report) = check_student_loss(seed, LossWeights::STUDENT)? {
            record("x2ct_loss(student)", report.max_rel_error);
        }
    }
    let mut failed = false;
    for (name, err) in &worst {
        let ok = *err < tol;
        failed |= !ok;
        println!("{:<28} max rel err {err:.3e} {}", name, if ok { "ok" } else { "FAIL" });
    }
    if failed {
        anyhow::bail!(Error::NonFinite {
            tensor: format!("gradient check above tolerance {tol}")
        });
    }
    Ok(())
}

fn stats(a: &Path, b: &Path) -> Result<()> {
    let (la, sa) = workflow::read_scores(a)?;
    let (lb, sb) = workflow::read_scores(b)?;
    if la != lb {
        return Err(Error::format("score csv", "the two files must list the same labels in the same order").into());
    }
    let r = delong_test(&sa, &sb, &la).with_context(|| format!("delong on {} and {}", a.display(), b.display()))?;
    println!("auc_a,auc_b,z,p");
    println!("{},{},{},{}", r.auc_a, r.auc_b, r.z, r.p_two_tailed);
    Ok(())
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("X2CT_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::config("X2CT_THREADS", format!("{v:?} is not a positive integer")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("thread pool")?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    match init_threads().and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
