use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::report::*;
use crate::distillation::{distill, make_student, FrozenTeacher};
use crate::document::{ModelDocument, ModelRole};
use crate::dynamics::{CellParams, ConstraintConfig, Enforcement};
use crate::error::{Error, Result};
use crate::model::DeployedModel;
use crate::profiles::{coupling_fit, gaps, profile, proposition_outcome, ProbeConfig};
use crate::rng::derive_key;
use crate::tasks::SequenceTask;
use crate::training::{init_params, train, MetricLog, ObjectiveWeights, OptimConfig};

pub const MATCHING: &str = "students of both families share budget, initialization seed, \
distillation data and data order; only the teacher labels differ";

/// Collects written artifacts and their hashes.
struct ArtifactSink<'a> {
    root: &'a Path,
    manifest: Vec<Artifact>,
}

impl ArtifactSink<'_> {
    fn write(&mut self, rel: &str, content: &[u8]) -> Result<String> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, content).map_err(|e| Error::io(&path, e))?;
        self.manifest.push(Artifact {
            path: rel.to_string(),
            sha256: hex::encode(Sha256::digest(content)),
        });
        Ok(rel.to_string())
    }
}

/// Seeds for one experiment seed and task. Both families share every one
/// of them.
pub struct ArmSeeds {
    pub teacher: u64,
    pub student_init: u64,
    pub distill: u64,
    pub probe: u64,
}

impl ArmSeeds {
    pub fn new(seed: u64, task_index: usize, budget: usize, probe: &ProbeConfig) -> Self {
        let base = derive_key(seed, "task-index", task_index as u64);
        ArmSeeds {
            teacher: base,
            student_init: derive_key(base, "student-init", budget as u64),
            distill: derive_key(base, "distill", budget as u64),
            probe: derive_key(probe.seed, "seed", seed),
        }
    }
}

/// Teacher optimizer settings for one seed and task.
pub fn teacher_optim(cfg: &ExperimentConfig, seed: u64, task_index: usize) -> OptimConfig {
    cfg.teacher_optim
        .with_seed(ArmSeeds::new(seed, task_index, 0, &cfg.probe).teacher)
}

pub fn family_weights(cfg: &ExperimentConfig, family: Family) -> ObjectiveWeights {
    match family {
        Family::Base => ObjectiveWeights::BASELINE,
        Family::Cc => cfg.objective,
    }
}

/// Enforcement a trained teacher runs under.
pub fn family_deployment(cfg: &ConstraintConfig, family: Family) -> Enforcement {
    match family {
        Family::Base => Enforcement::Soft,
        Family::Cc => cfg.enforcement,
    }
}

/// Trains one teacher exactly as the experiment does.
pub fn train_teacher(
    cfg: &ExperimentConfig,
    family: Family,
    seed: u64,
    task_index: usize,
) -> Result<(CellParams, MetricLog)> {
    let task = &cfg.tasks[task_index];
    let optim = teacher_optim(cfg, seed, task_index);
    let init = init_params(cfg.model.for_task(task), &optim);
    train(init, &cfg.constraint, &family_weights(cfg, family), task, &optim)
}

pub fn teacher_document(
    cfg: &ExperimentConfig,
    family: Family,
    params: CellParams,
    task: &SequenceTask,
    seed: u64,
) -> ModelDocument {
    let role = match family {
        Family::Base => ModelRole::Base,
        Family::Cc => ModelRole::Cc,
    };
    let mut doc = ModelDocument::new(
        role,
        params,
        family_deployment(&cfg.constraint, family),
        cfg.constraint,
        *task,
        seed,
    );
    doc.objective = Some(family_weights(cfg, family));
    doc
}

fn probe_for(cfg: &ExperimentConfig, seed: u64) -> ProbeConfig {
    ProbeConfig {
        seed: ArmSeeds::new(seed, 0, 0, &cfg.probe).probe,
        ..cfg.probe.clone()
    }
}

fn run_task(
    cfg: &ExperimentConfig,
    seed: u64,
    task_index: usize,
    sink: &mut ArtifactSink,
    record: &mut TaskRecord,
) -> Result<()> {
    let task = cfg.tasks[task_index];
    let yard = cfg.constraint;
    let probe = probe_for(cfg, seed);
    let dir = format!("seed-{seed}/{}", task.kind.name());
    let mut teachers = Vec::new();
    for family in Family::ALL {
        let (params, log) = train_teacher(cfg, family, seed, task_index)?;
        let doc = teacher_document(cfg, family, params, &task, seed);
        let artifact = sink.write(&format!("{dir}/teacher-{}.json", family.name()), doc.to_json()?.as_bytes())?;
        let metrics_artifact = sink.write(
            &format!("{dir}/teacher-{}-metrics.csv", family.name()),
            log.to_csv_string()?.as_bytes(),
        )?;
        let model = doc.deployed();
        let prof = profile(&model, &yard, &task, &probe)?;
        record.teachers.push(TeacherRecord {
            family,
            artifact: artifact.clone(),
            metrics_artifact,
            final_metrics: *log.last().expect("log has a pre-training row"),
            profile: prof,
        });
        teachers.push((family, model, artifact, prof));
    }
    for &budget in &cfg.distill.budgets {
        let seeds = ArmSeeds::new(seed, task_index, budget, &cfg.probe);
        let dcfg = cfg.distill.config(budget, seeds.distill);
        for (family, model, teacher_artifact, teacher_prof) in &teachers {
            let student = make_student(
                model.params.dims(),
                dcfg.shrink,
                dcfg.optim.init_scale,
                seeds.student_init,
            )?;
            let frozen = FrozenTeacher::new(model.clone(), yard);
            let arm = distill(&frozen, teacher_artifact, student, &dcfg, &task)?;
            let student_model = DeployedModel::soft(arm.params.clone());
            let prof = profile(&student_model, &yard, &task, &probe)?;
            let g = gaps(
                teacher_prof.capability.accuracy,
                prof.capability.accuracy,
                &teacher_prof.stability,
                &prof.stability,
            );
            let outcome = proposition_outcome(g.delta_k, g.delta_r, prof.burden_mean, teacher_prof.burden_mean, &cfg.thresholds);
            let mut doc = ModelDocument::new(ModelRole::Student, arm.params, Enforcement::Soft, yard, task, seed);
            doc.teacher = Some(teacher_artifact.clone());
            doc.budget = Some(budget);
            let artifact = sink.write(
                &format!("{dir}/student-{}-{budget}.json", family.name()),
                doc.to_json()?.as_bytes(),
            )?;
            record.students.push(StudentRecord {
                family: *family,
                budget,
                artifact,
                summary: arm.summary,
                profile: prof,
                gaps: g,
                outcome,
            });
        }
    }
    Ok(())
}

fn fit_family<'a>(family: Family, students: impl Iterator<Item = &'a StudentRecord>) -> FamilyCoupling {
    let points: Vec<(f64, f64)> = students
        .filter(|s| s.family == family)
        .map(|s| (s.gaps.delta_k, s.gaps.delta_r))
        .collect();
    match coupling_fit(&points) {
        Ok(e) => FamilyCoupling {
            family,
            estimate: Some(e),
            error: None,
        },
        Err(e) => FamilyCoupling {
            family,
            estimate: None,
            error: Some(e.to_string()),
        },
    }
}

fn run_seed(cfg: &ExperimentConfig, seed: u64, sink: &mut ArtifactSink) -> SeedRecord {
    let mut rec = SeedRecord {
        seed,
        status: SeedStatus::Completed,
        diagnostic: None,
        tasks: Vec::new(),
        coupling: Vec::new(),
    };
    for (i, task) in cfg.tasks.iter().enumerate() {
        let mut tr = TaskRecord {
            task: *task,
            teachers: Vec::new(),
            students: Vec::new(),
        };
        let outcome = run_task(cfg, seed, i, sink, &mut tr);
        rec.tasks.push(tr);
        if let Err(e) = outcome {
            rec.status = SeedStatus::Failed;
            rec.diagnostic = Some(format!("task {}: {e}", task.kind.name()));
            break;
        }
    }
    rec.coupling = Family::ALL
        .iter()
        .map(|f| fit_family(*f, rec.students().map(|(_, s)| s)))
        .collect();
    rec
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

fn summarize(
    id: &str,
    statistic: &str,
    description: &str,
    seeds: &[SeedRecord],
    per_family: impl Fn(&SeedRecord, Family) -> Option<f64>,
) -> HypothesisSummary {
    let per_seed: Vec<SeedStat> = seeds
        .iter()
        .map(|rec| {
            let f = FamilyStat::new(per_family(rec, Family::Base), per_family(rec, Family::Cc));
            SeedStat {
                seed: rec.seed,
                base: f.base,
                cc: f.cc,
                difference: f.difference,
            }
        })
        .collect();
    let pooled = FamilyStat {
        base: mean(per_seed.iter().filter_map(|s| s.base)),
        cc: mean(per_seed.iter().filter_map(|s| s.cc)),
        difference: mean(per_seed.iter().filter_map(|s| s.difference)),
    };
    HypothesisSummary {
        id: id.into(),
        statistic: statistic.into(),
        description: description.into(),
        per_seed,
        pooled,
    }
}

/// H1 to H4 statistics from completed seed records.
pub fn hypothesis_summaries(cfg: &ExperimentConfig, seeds: &[SeedRecord]) -> Vec<HypothesisSummary> {
    let eps = cfg.thresholds.epsilon_k;
    let censor = 2 * cfg.distill.budgets.last().copied().unwrap_or(0);
    let mut out = vec![summarize(
        "H1",
        "coupling_slope",
        "least-squares slope of delta_r on delta_k over the seed's students",
        seeds,
        |rec, f| {
            rec.coupling
                .iter()
                .find(|c| c.family == f)
                .and_then(|c| c.estimate.as_ref())
                .map(|e| e.slope)
        },
    )];
    for (i, factor) in cfg.probe.horizon_factors.iter().enumerate() {
        out.push(summarize(
            "H2",
            &format!("student_accuracy_drop_x{factor}"),
            "mean over students of nominal accuracy minus accuracy at the longer horizon",
            seeds,
            |rec, f| {
                mean(rec.students().filter(|(_, s)| s.family == f).map(|(_, s)| {
                    let long = if i == 0 { s.profile.stability.acc_h2 } else { s.profile.stability.acc_h4 };
                    s.profile.capability.accuracy - long
                }))
            },
        ));
    }
    out.push(summarize(
        "H3",
        "min_budget_within_epsilon_k",
        &format!(
            "mean over tasks of the smallest budget whose student has delta_k <= {eps}; \
             tasks never reaching it count as {censor}"
        ),
        seeds,
        |rec, f| {
            mean(rec.tasks.iter().filter(|t| !t.students.is_empty()).map(|t| {
                t.students
                    .iter()
                    .filter(|s| s.family == f && s.gaps.delta_k <= eps)
                    .map(|s| s.budget)
                    .min()
                    .unwrap_or(censor) as f64
            }))
        },
    ));
    out.push(summarize(
        "H4",
        "delta_r_within_epsilon_k",
        &format!("mean delta_r over students with delta_k <= {eps}"),
        seeds,
        |rec, f| {
            mean(
                rec.students()
                    .filter(|(_, s)| s.family == f && s.gaps.delta_k <= eps)
                    .map(|(_, s)| s.gaps.delta_r),
            )
        },
    ));
    out
}

/// Runs every seed of the experiment, writing model and metric artifacts
/// under the resolved output directory. A failing seed is recorded with a
/// diagnostic and the remaining seeds still run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ReportBundle> {
    cfg.validate()?;
    let root = cfg.resolved_output_dir();
    std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let mut sink = ArtifactSink {
        root: &root,
        manifest: Vec::new(),
    };
    let seeds: Vec<SeedRecord> = cfg.seeds.iter().map(|&s| run_seed(cfg, s, &mut sink)).collect();
    let coupling = Family::ALL
        .iter()
        .map(|f| fit_family(*f, seeds.iter().flat_map(|r| r.students().map(|(_, s)| s))))
        .collect();
    let hypotheses = hypothesis_summaries(cfg, &seeds);
    Ok(ReportBundle {
        format: REPORT_FORMAT.into(),
        version: REPORT_VERSION,
        config: cfg.clone(),
        matching: MATCHING.into(),
        seeds,
        coupling,
        hypotheses,
        manifest: sink.manifest,
    })
}
