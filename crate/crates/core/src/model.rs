use crate::dynamics::{rollout_embedded, CellParams, ConstraintConfig, Enforcement, TrajectoryRecord};
use crate::error::Result;

/// Parameters together with the enforcement mode they run under.
#[derive(Debug, Clone, PartialEq)]
pub struct DeployedModel {
    pub params: CellParams,
    pub enforcement: Enforcement,
}

impl DeployedModel {
    pub fn new(params: CellParams, enforcement: Enforcement) -> Self {
        DeployedModel { params, enforcement }
    }

    pub fn soft(params: CellParams) -> Self {
        Self::new(params, Enforcement::Soft)
    }

    /// Rollout measured against `yardstick`, run with this model's own
    /// enforcement mode.
    pub fn trajectory(&self, yardstick: &ConstraintConfig, tokens: &[usize]) -> Result<TrajectoryRecord> {
        let inputs = self.params.embed_tokens(tokens)?;
        self.trajectory_embedded(yardstick, &inputs)
    }

    pub fn trajectory_embedded(
        &self,
        yardstick: &ConstraintConfig,
        inputs: &[Vec<f64>],
    ) -> Result<TrajectoryRecord> {
        let cfg = yardstick.with_enforcement(self.enforcement);
        rollout_embedded(&self.params, &cfg, inputs)
    }
}

/// Anything that maps a token sequence to per-step logits. `noise`, when
/// given, is added to the input embeddings step by step.
pub trait SequenceModel {
    fn logits(
        &self,
        yardstick: &ConstraintConfig,
        tokens: &[usize],
        noise: Option<&[Vec<f64>]>,
    ) -> Result<Vec<Vec<f64>>>;
}

impl SequenceModel for DeployedModel {
    fn logits(
        &self,
        yardstick: &ConstraintConfig,
        tokens: &[usize],
        noise: Option<&[Vec<f64>]>,
    ) -> Result<Vec<Vec<f64>>> {
        let mut inputs = self.params.embed_tokens(tokens)?;
        if let Some(noise) = noise {
            for (e, eps) in inputs.iter_mut().zip(noise) {
                for (x, n) in e.iter_mut().zip(eps) {
                    *x += n;
                }
            }
        }
        Ok(self.trajectory_embedded(yardstick, &inputs)?.logits)
    }
}
