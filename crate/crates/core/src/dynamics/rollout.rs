use serde::{Deserialize, Serialize};

use super::cell::{output_logits, step_embedded};
use super::config::{ConstraintConfig, Enforcement, PathMode};
use super::constraint::{burden_unchecked, feasible_radius, l2, project};
use super::params::CellParams;
use crate::error::{Error, Result};

/// Per-step record of a constrained rollout.
///
/// Step `t` (0-based) consumes input `t`, maps `states[t]` to
/// `states[t + 1]` under the ball of radius `radii[t]` (the radius implied
/// by the load accumulated before the step), then charges `burdens[t]` for
/// the realized transition and updates the load to `loads[t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub states: Vec<Vec<f64>>,
    pub burdens: Vec<f64>,
    pub loads: Vec<f64>,
    pub radii: Vec<f64>,
    pub burden_violations: Vec<bool>,
    pub feasibility_violations: Vec<bool>,
    pub logits: Vec<Vec<f64>>,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.burdens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.burdens.is_empty()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("initial state always present")
    }

    pub fn burden_violation_count(&self) -> usize {
        self.burden_violations.iter().filter(|v| **v).count()
    }

    pub fn feasibility_violation_count(&self) -> usize {
        self.feasibility_violations.iter().filter(|v| **v).count()
    }
}

/// Rolls the cell over `tokens` from the zero state.
pub fn rollout(params: &CellParams, cfg: &ConstraintConfig, tokens: &[usize]) -> Result<TrajectoryRecord> {
    let inputs = params.embed_tokens(tokens)?;
    rollout_embedded(params, cfg, &inputs)
}

/// Rollout over explicit (possibly perturbed) input embeddings.
pub fn rollout_embedded(
    params: &CellParams,
    cfg: &ConstraintConfig,
    inputs: &[Vec<f64>],
) -> Result<TrajectoryRecord> {
    if inputs.is_empty() {
        return Err(Error::EmptySequence);
    }
    let d = params.dims().embed;
    if let Some(bad) = inputs.iter().find(|e| e.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: bad.len(),
        });
    }
    let steps = inputs.len();
    let mut rec = TrajectoryRecord {
        states: Vec::with_capacity(steps + 1),
        burdens: Vec::with_capacity(steps),
        loads: Vec::with_capacity(steps),
        radii: Vec::with_capacity(steps),
        burden_violations: Vec::with_capacity(steps),
        feasibility_violations: Vec::with_capacity(steps),
        logits: Vec::with_capacity(steps),
    };
    let mut h = vec![0.0; params.hidden()];
    let mut load = 0.0;
    rec.states.push(h.clone());
    for e in inputs {
        let radius = feasible_radius(load, cfg);
        let mut next = step_embedded(params, &h, e);
        if cfg.enforcement == Enforcement::Hard {
            next = project(&next, radius);
        }
        let b = burden_unchecked(&h, &next, cfg);
        load = match cfg.path_mode {
            PathMode::Uniform => load + cfg.alpha * b,
            PathMode::Discounted => cfg.lambda_path * load + b,
        };
        rec.feasibility_violations.push(l2(&next) > radius);
        rec.burden_violations.push(b > cfg.threshold);
        rec.burdens.push(b);
        rec.loads.push(load);
        rec.radii.push(radius);
        rec.logits.push(output_logits(params, &next));
        rec.states.push(next.clone());
        h = next;
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{burden, ModelDims};
    use crate::rng;

    #[test]
    fn zero_params_give_zero_trajectory() {
        let p = CellParams::zeros(ModelDims::new(3, 2, 4));
        let rec = rollout(&p, &ConstraintConfig::default(), &[0, 1, 2, 3, 1]).unwrap();
        assert_eq!(rec.len(), 5);
        assert_eq!(rec.states.len(), 6);
        for t in 0..5 {
            let expect = burden(&rec.states[t], &rec.states[t + 1], &ConstraintConfig::default()).unwrap();
            assert_eq!(rec.burdens[t], expect);
            assert_eq!(rec.burdens[t], 0.0);
        }
        assert_eq!(*rec.loads.last().unwrap(), 0.0);
        assert_eq!(rec.burden_violation_count() + rec.feasibility_violation_count(), 0);
    }

    #[test]
    fn empty_sequence_rejected() {
        let p = CellParams::zeros(ModelDims::new(3, 2, 4));
        assert!(matches!(
            rollout(&p, &ConstraintConfig::default(), &[]),
            Err(Error::EmptySequence)
        ));
    }

    #[test]
    fn hard_enforcement_keeps_states_feasible() {
        let p = CellParams::init_uniform(ModelDims::new(6, 3, 5), 3.0, &mut rng::stream(11, "x"));
        let cfg = ConstraintConfig {
            r0: 0.8,
            r_min: 0.1,
            kappa: 1.0,
            enforcement: Enforcement::Hard,
            ..Default::default()
        };
        let rec = rollout(&p, &cfg, &[0, 4, 2, 2, 1, 3, 0, 0]).unwrap();
        assert_eq!(rec.feasibility_violation_count(), 0);
        for (s, r) in rec.states[1..].iter().zip(&rec.radii) {
            assert!(l2(s) <= r * (1.0 + 1e-12));
        }
    }

    #[test]
    fn trajectory_serializes_to_json() {
        let p = CellParams::zeros(ModelDims::new(2, 2, 3));
        let rec = rollout(&p, &ConstraintConfig::default(), &[1, 2]).unwrap();
        let json = serde_json::to_string(&rec).unwrap();
        let back: TrajectoryRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rec);
    }
}
