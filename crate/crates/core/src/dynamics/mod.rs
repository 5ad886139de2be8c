//! Constrained recurrent state evolution.
//!
//! A gated recurrent cell drives the latent state. Each transition is
//! charged a burden; burdens accumulate into a path load; the load shrinks
//! a ball of admissible next states. Under [`Enforcement::Hard`] each new
//! state is projected into the ball, under [`Enforcement::Soft`] violations
//! are only recorded.

mod cell;
mod config;
mod constraint;
mod params;
mod rollout;

pub use cell::{output_logits, step, step_embedded};
pub use config::{ConstraintConfig, Enforcement, PathMode};
pub use constraint::{burden, feasibility_penalty, feasible_radius, path_load_update, project};
pub use params::{CellParams, ModelDims, PARAM_NAMES};
pub use rollout::{rollout, rollout_embedded, TrajectoryRecord};

