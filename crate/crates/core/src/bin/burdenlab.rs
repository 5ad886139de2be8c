use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use burdenlab::distillation::{distill, make_student, FrozenTeacher};
use burdenlab::document::{ModelDocument, ModelRole};
use burdenlab::dynamics::Enforcement;
use burdenlab::harness::{
    emit_report, run_experiment, teacher_document, train_teacher, ExperimentConfig, Family, ReportBundle,
    ReportFormat,
};
use burdenlab::profiles::profile;
use burdenlab::rng::derive_key;
use burdenlab::tasks::TaskKind;
use burdenlab::{Error, Result};

#[derive(Parser)]
#[command(name = "burdenlab", version, about = "Burden-bounded recurrent teachers and distilled students")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one teacher and write its model document and metric log.
    TrainTeacher {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = ["base", "cc"])]
        arm: String,
        #[arg(long)]
        seed: u64,
        /// task kind from the config; defaults to the first task
        #[arg(long)]
        task: Option<String>,
    },
    /// Distill a student from a saved teacher.
    Distill {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        budget: usize,
        /// supplies the student settings; defaults apply without it
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print capability and stability profile of a saved model as JSON.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        /// supplies the probe settings; defaults apply without it
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run a full experiment and write report.json, summary.csv and hypotheses.csv.
    Experiment {
        #[arg(long)]
        config: PathBuf,
    },
    /// Re-emit a saved report bundle.
    Report {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, value_parser = ["json", "csv"])]
        format: String,
        /// write files here instead of printing to stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// An unreadable config file counts as a configuration error.
fn read_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).map_err(|e| match e {
        Error::Io { .. } => Error::Config(e.to_string()),
        other => other,
    })
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    path.map_or_else(|| Ok(ExperimentConfig::default()), read_config)
}

fn output_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.resolved_output_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    Ok(dir)
}

fn write(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainTeacher { config, arm, seed, task } => {
            let cfg = read_config(&config)?;
            let family: Family = arm.parse()?;
            let index = match task {
                None => 0,
                Some(name) => {
                    let kind: TaskKind = name.parse()?;
                    cfg.tasks
                        .iter()
                        .position(|t| t.kind == kind)
                        .ok_or_else(|| Error::Config(format!("task `{name}` is not in the config")))?
                }
            };
            let task = cfg.tasks[index];
            let (params, log) = train_teacher(&cfg, family, seed, index)?;
            let dir = output_dir(&cfg)?;
            let stem = format!("teacher-{}-{}-seed{seed}", family.name(), task.kind.name());
            let model_path = dir.join(format!("{stem}.json"));
            teacher_document(&cfg, family, params, &task, seed).save(&model_path)?;
            let log_path = dir.join(format!("{stem}-metrics.csv"));
            write(&log_path, &log.to_csv_string()?)?;
            println!("{}", model_path.display());
            println!("{}", log_path.display());
        }
        Command::Distill {
            teacher,
            budget,
            config,
            seed,
        } => {
            let cfg = load_config(config.as_deref())?;
            let doc = ModelDocument::load(&teacher)?;
            let dcfg = cfg.distill.config(budget, derive_key(seed, "distill", budget as u64));
            let student = make_student(
                doc.params.dims(),
                dcfg.shrink,
                dcfg.optim.init_scale,
                derive_key(seed, "student-init", budget as u64),
            )?;
            let frozen = FrozenTeacher::new(doc.deployed(), doc.constraint);
            let id = teacher.display().to_string();
            let arm = distill(&frozen, &id, student, &dcfg, &doc.task)?;
            let mut out = ModelDocument::new(
                ModelRole::Student,
                arm.params,
                Enforcement::Soft,
                doc.constraint,
                doc.task,
                seed,
            );
            out.teacher = Some(id);
            out.budget = Some(budget);
            let dir = output_dir(&cfg)?;
            let stem = teacher.file_stem().and_then(|s| s.to_str()).unwrap_or("teacher");
            let path = dir.join(format!("student-{stem}-{budget}.json"));
            out.save(&path)?;
            println!("{}", serde_json::to_string_pretty(&arm.summary)?);
            println!("{}", path.display());
        }
        Command::Evaluate { model, config } => {
            let cfg = load_config(config.as_deref())?;
            let doc = ModelDocument::load(&model)?;
            let rep = profile(&doc.deployed(), &doc.constraint, &doc.task, &cfg.probe)?;
            println!("{}", serde_json::to_string_pretty(&rep)?);
        }
        Command::Experiment { config } => {
            let cfg = read_config(&config)?;
            let bundle = run_experiment(&cfg)?;
            for p in emit_report(&bundle, cfg.resolved_output_dir(), ReportFormat::All)? {
                println!("{}", p.display());
            }
            let failed = bundle.seeds.iter().filter(|s| s.diagnostic.is_some()).count();
            if failed > 0 {
                return Err(Error::Document(format!("{failed} seed(s) failed; see report.json")));
            }
        }
        Command::Report { bundle, format, out } => {
            let b = ReportBundle::load(&bundle)?;
            let format: ReportFormat = format.parse()?;
            match out {
                Some(dir) => {
                    for p in emit_report(&b, dir, format)? {
                        println!("{}", p.display());
                    }
                }
                None if b.seeds.is_empty() => return Err(Error::EmptyReport),
                None if format == ReportFormat::Json => print!("{}", b.to_json()?),
                None => {
                    print!("{}", b.summary_csv()?);
                    println!();
                    print!("{}", b.hypotheses_csv()?);
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
