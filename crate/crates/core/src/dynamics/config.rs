use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PathMode {
    /// `L_t = L_{t-1} + alpha * b_t`
    #[default]
    Uniform,
    /// `L_t = lambda_path * L_{t-1} + b_t`
    Discounted,
}

/// How the feasible region is realized during a rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Enforcement {
    /// Violations are only observed (and penalized during training).
    #[default]
    Soft,
    /// Each new state is radially projected into the feasible ball.
    Hard,
}

/// Constants for the burden functional, threshold, path load and the
/// contracting feasible ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintConfig {
    pub w_disp: f64,
    pub w_grow: f64,
    /// burden threshold, constant over time
    pub threshold: f64,
    pub path_mode: PathMode,
    pub alpha: f64,
    pub lambda_path: f64,
    pub r0: f64,
    pub kappa: f64,
    pub r_min: f64,
    pub enforcement: Enforcement,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        ConstraintConfig {
            w_disp: 1.0,
            w_grow: 0.5,
            threshold: 0.5,
            path_mode: PathMode::Uniform,
            alpha: 1.0,
            lambda_path: 0.95,
            r0: 3.0,
            kappa: 0.05,
            r_min: 0.5,
            enforcement: Enforcement::Soft,
        }
    }
}

impl ConstraintConfig {
    pub fn validate(&self) -> Result<()> {
        let all_finite = [
            self.w_disp,
            self.w_grow,
            self.threshold,
            self.alpha,
            self.lambda_path,
            self.r0,
            self.kappa,
            self.r_min,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::config("constraint constants must be finite"));
        }
        if self.w_disp < 0.0 || self.w_grow < 0.0 || self.alpha < 0.0 {
            return Err(Error::config("w_disp, w_grow and alpha must be >= 0"));
        }
        if self.threshold <= 0.0 {
            return Err(Error::config("burden threshold must be > 0"));
        }
        if !(self.r0 > self.r_min && self.r_min > 0.0) {
            return Err(Error::config("need r0 > r_min > 0"));
        }
        if self.kappa < 0.0 {
            return Err(Error::config("kappa must be >= 0"));
        }
        if !(self.lambda_path > 0.0 && self.lambda_path <= 1.0) {
            return Err(Error::config("lambda_path must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn with_enforcement(mut self, enforcement: Enforcement) -> Self {
        self.enforcement = enforcement;
        self
    }
}
