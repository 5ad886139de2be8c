use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::distillation::StudentSummary;
use crate::error::{Error, Result};
use crate::profiles::{outcome_label, CouplingEstimate, Gaps, Outcome, ProfileReport};
use crate::tasks::SequenceTask;
use crate::training::{csv_err, EpochMetrics};

pub const REPORT_FORMAT: &str = "burdenlab-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Base,
    Cc,
}

impl Family {
    pub const ALL: [Family; 2] = [Family::Base, Family::Cc];

    pub fn name(self) -> &'static str {
        match self {
            Family::Base => "base",
            Family::Cc => "cc",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Family::Base),
            "cc" => Ok(Family::Cc),
            other => Err(Error::config(format!("unknown arm `{other}` (expected base or cc)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherRecord {
    pub family: Family,
    pub artifact: String,
    pub metrics_artifact: String,
    pub final_metrics: EpochMetrics,
    pub profile: ProfileReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentRecord {
    pub family: Family,
    pub budget: usize,
    pub artifact: String,
    pub summary: StudentSummary,
    pub profile: ProfileReport,
    pub gaps: Gaps,
    pub outcome: Vec<Outcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task: SequenceTask,
    pub teachers: Vec<TeacherRecord>,
    pub students: Vec<StudentRecord>,
}

impl TaskRecord {
    pub fn teacher(&self, family: Family) -> Option<&TeacherRecord> {
        self.teachers.iter().find(|t| t.family == family)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeedStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyCoupling {
    pub family: Family,
    pub estimate: Option<CouplingEstimate>,
    /// why no estimate could be fitted
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub status: SeedStatus,
    pub diagnostic: Option<String>,
    pub tasks: Vec<TaskRecord>,
    pub coupling: Vec<FamilyCoupling>,
}

impl SeedRecord {
    pub fn students(&self) -> impl Iterator<Item = (&TaskRecord, &StudentRecord)> {
        self.tasks.iter().flat_map(|t| t.students.iter().map(move |s| (t, s)))
    }
}

/// Per-family values and the `cc − base` difference.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FamilyStat {
    pub base: Option<f64>,
    pub cc: Option<f64>,
    pub difference: Option<f64>,
}

impl FamilyStat {
    pub fn new(base: Option<f64>, cc: Option<f64>) -> Self {
        let difference = match (base, cc) {
            (Some(b), Some(c)) => Some(c - b),
            _ => None,
        };
        FamilyStat { base, cc, difference }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedStat {
    pub seed: u64,
    pub base: Option<f64>,
    pub cc: Option<f64>,
    pub difference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSummary {
    pub id: String,
    pub statistic: String,
    pub description: String,
    pub per_seed: Vec<SeedStat>,
    /// means of the per-seed values that exist
    pub pooled: FamilyStat,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// relative to the output directory, `/`-separated
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub format: String,
    pub version: u32,
    pub config: ExperimentConfig,
    pub matching: String,
    pub seeds: Vec<SeedRecord>,
    /// fits over every seed and task for each family
    pub coupling: Vec<FamilyCoupling>,
    pub hypotheses: Vec<HypothesisSummary>,
    pub manifest: Vec<Artifact>,
}

impl ReportBundle {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let b: ReportBundle = serde_json::from_str(s)?;
        if b.format != REPORT_FORMAT || b.version != REPORT_VERSION {
            return Err(Error::Document(format!("unsupported report {} v{}", b.format, b.version)));
        }
        Ok(b)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    pub fn summary_csv(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Row<'a> {
            seed: u64,
            task: &'a str,
            family: &'a str,
            budget: usize,
            teacher_accuracy: f64,
            student_accuracy: f64,
            delta_k: f64,
            delta_r: f64,
            outcome: String,
            burden_violation_rate: f64,
            feasibility_violation_rate: f64,
            discrepancy: f64,
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        for rec in &self.seeds {
            for (task, s) in rec.students() {
                let teacher_acc = task.teacher(s.family).map(|t| t.profile.capability.accuracy);
                w.serialize(Row {
                    seed: rec.seed,
                    task: task.task.kind.name(),
                    family: s.family.name(),
                    budget: s.budget,
                    teacher_accuracy: teacher_acc.unwrap_or(f64::NAN),
                    student_accuracy: s.profile.capability.accuracy,
                    delta_k: s.gaps.delta_k,
                    delta_r: s.gaps.delta_r,
                    outcome: outcome_label(&s.outcome),
                    burden_violation_rate: s.profile.stability.burden_violation_rate,
                    feasibility_violation_rate: s.profile.stability.feasibility_violation_rate,
                    discrepancy: s.summary.discrepancy.mean,
                })
                .map_err(csv_err)?;
            }
        }
        finish_csv(w)
    }

    pub fn hypotheses_csv(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Row<'a> {
            hypothesis: &'a str,
            statistic: &'a str,
            seed: String,
            base: Option<f64>,
            cc: Option<f64>,
            difference: Option<f64>,
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        for h in &self.hypotheses {
            for s in &h.per_seed {
                w.serialize(Row {
                    hypothesis: &h.id,
                    statistic: &h.statistic,
                    seed: s.seed.to_string(),
                    base: s.base,
                    cc: s.cc,
                    difference: s.difference,
                })
                .map_err(csv_err)?;
            }
            w.serialize(Row {
                hypothesis: &h.id,
                statistic: &h.statistic,
                seed: "pooled".into(),
                base: h.pooled.base,
                cc: h.pooled.cc,
                difference: h.pooled.difference,
            })
            .map_err(csv_err)?;
        }
        finish_csv(w)
    }
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Document(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    All,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "all" => Ok(ReportFormat::All),
            other => Err(Error::config(format!("unknown report format `{other}`"))),
        }
    }
}

/// Writes `report.json`, `summary.csv` and `hypotheses.csv` (as selected by
/// `format`) into `dir` and returns the written paths.
pub fn emit_report(bundle: &ReportBundle, dir: impl AsRef<Path>, format: ReportFormat) -> Result<Vec<PathBuf>> {
    if bundle.seeds.is_empty() {
        return Err(Error::EmptyReport);
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    if matches!(format, ReportFormat::Json | ReportFormat::All) {
        files.push(("report.json", bundle.to_json()?));
    }
    if matches!(format, ReportFormat::Csv | ReportFormat::All) {
        files.push(("summary.csv", bundle.summary_csv()?));
        files.push(("hypotheses.csv", bundle.hypotheses_csv()?));
    }
    let mut written = Vec::new();
    for (name, content) in files {
        let path = dir.join(name);
        std::fs::write(&path, content).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
