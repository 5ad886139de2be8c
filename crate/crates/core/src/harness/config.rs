use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::distillation::DistillConfig;
use crate::dynamics::{ConstraintConfig, ModelDims};
use crate::error::{Error, Result};
use crate::profiles::{ProbeConfig, Thresholds};
use crate::tasks::{SequenceTask, Supervision};
use crate::training::{ObjectiveWeights, OptimConfig};

pub const OUT_ENV: &str = "BURDENLAB_OUT";

/// Teacher hidden and embedding sizes; the vocabulary comes from each task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherDims {
    pub hidden: usize,
    pub embed: usize,
}

impl Default for TeacherDims {
    fn default() -> Self {
        TeacherDims { hidden: 32, embed: 8 }
    }
}

impl TeacherDims {
    pub fn for_task(&self, task: &SequenceTask) -> ModelDims {
        ModelDims::new(self.hidden, self.embed, task.vocab)
    }
}

/// Student settings shared by every budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillPlan {
    /// strictly increasing
    pub budgets: Vec<usize>,
    pub kd_temperature: f64,
    pub shrink: f64,
    pub epsilon_target: f64,
    pub discrepancy_samples: usize,
    pub optim: OptimConfig,
}

impl Default for DistillPlan {
    fn default() -> Self {
        let d = DistillConfig::default();
        DistillPlan {
            budgets: vec![1000, 4000, 16000],
            kd_temperature: d.kd_temperature,
            shrink: d.shrink,
            epsilon_target: d.epsilon_target,
            discrepancy_samples: d.discrepancy_samples,
            optim: d.optim,
        }
    }
}

impl DistillPlan {
    pub fn config(&self, budget: usize, seed: u64) -> DistillConfig {
        DistillConfig {
            budget,
            kd_temperature: self.kd_temperature,
            shrink: self.shrink,
            epsilon_target: self.epsilon_target,
            discrepancy_samples: self.discrepancy_samples,
            optim: self.optim.with_seed(seed),
        }
    }
}

fn default_tasks() -> Vec<SequenceTask> {
    vec![
        SequenceTask::copy(8, 8, 2).with_seed(11),
        SequenceTask::parity(8, 8).with_seed(12).with_supervision(Supervision::Running),
        SequenceTask::modsum(8, 8, 5).with_seed(13).with_supervision(Supervision::Running),
    ]
}

fn default_teacher_optim() -> OptimConfig {
    OptimConfig {
        learning_rate: 0.5,
        ..OptimConfig::default()
    }
}

/// Everything needed to reproduce an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub tasks: Vec<SequenceTask>,
    pub model: TeacherDims,
    pub constraint: ConstraintConfig,
    /// weights of the constrained family; the baseline family uses zeros
    pub objective: ObjectiveWeights,
    pub teacher_optim: OptimConfig,
    pub distill: DistillPlan,
    pub probe: ProbeConfig,
    pub thresholds: Thresholds,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            output_dir: PathBuf::from("runs/default"),
            seeds: vec![1, 2, 3],
            tasks: default_tasks(),
            model: TeacherDims::default(),
            constraint: ConstraintConfig::default(),
            objective: ObjectiveWeights::default(),
            teacher_optim: default_teacher_optim(),
            distill: DistillPlan::default(),
            probe: ProbeConfig::default(),
            thresholds: Thresholds::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::config("seeds must be distinct"));
        }
        if self.tasks.is_empty() {
            return Err(Error::config("at least one task is required"));
        }
        for t in &self.tasks {
            t.validate()?;
        }
        let mut names: Vec<&str> = self.tasks.iter().map(|t| t.kind.name()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.tasks.len() {
            return Err(Error::config("each task kind may appear at most once"));
        }
        if self.model.hidden < 1 || self.model.embed < 1 {
            return Err(Error::config("model sizes must be >= 1"));
        }
        if self.distill.budgets.is_empty() {
            return Err(Error::config("at least one budget is required"));
        }
        if self.distill.budgets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("budgets must be strictly increasing"));
        }
        self.constraint.validate()?;
        self.objective.validate()?;
        self.teacher_optim.validate()?;
        self.distill.config(0, 0).validate()?;
        let student_hidden = (self.distill.shrink * self.model.hidden as f64 - 1e-9).ceil();
        if student_hidden < 2.0 {
            return Err(Error::ShrinkTooSmall {
                shrink: self.distill.shrink,
                teacher: self.model.hidden,
                hidden: student_hidden.max(0.0) as usize,
            });
        }
        self.probe.validate()?;
        self.thresholds.validate()
    }

    /// Output directory after applying the environment override.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output_dir.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = ExperimentConfig::default();
        c.seeds.clear();
        assert!(c.validate().unwrap_err().is_config());
        let mut c = ExperimentConfig::default();
        c.distill.budgets = vec![4000, 1000];
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.distill.shrink = 0.01;
        assert!(c.validate().unwrap_err().is_config());
        assert!(ExperimentConfig::from_toml("unknown_key = 3").is_err());
    }
}
