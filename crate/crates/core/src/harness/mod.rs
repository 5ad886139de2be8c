//! Config-driven experiment: paired teacher families, matched students at
//! several budgets, profiles, coupling fits, outcome labels and the
//! hypothesis summaries, plus report emission.

mod config;
mod report;
mod run;

pub use config::{DistillPlan, ExperimentConfig, TeacherDims, OUT_ENV};
pub use report::{
    emit_report, Artifact, Family, FamilyCoupling, FamilyStat, HypothesisSummary, ReportBundle, ReportFormat,
    SeedRecord, SeedStat, SeedStatus, StudentRecord, TaskRecord, TeacherRecord, REPORT_FORMAT, REPORT_VERSION,
};
pub use run::{
    family_deployment, family_weights, hypothesis_summaries, run_experiment, teacher_document, teacher_optim,
    train_teacher, ArmSeeds, MATCHING,
};
