//! Weighted constrained objective and the SGD loop that produces teachers.
//!
//! The objective on a batch is
//! `task + λ1·Σ_t max{0, b_t − B} + λ2·Σ_t Φ(h_{t+1}, r_t) + λ3·L_stab`,
//! with time sums taken per sequence and everything averaged over the batch.
//! `Φ` is the squared excess norm over the feasible radius and `L_stab` the
//! final-state divergence under small embedding noise.

mod graph;
mod objective;
mod optim;

pub use graph::{build_rollout, feasibility_penalty_node, GraphTrajectory, ParamNodes, Tracking};
pub use objective::{
    burden_hinge, draw_stability_noise, evaluate_components, example_task_loss, stability_loss,
    task_only_graph, total_loss, trajectory_feasibility, LossBreakdown, ObjectiveGraph, ObjectiveWeights,
};
pub use optim::{
    clip_gradients, init_params, train, train_task_only, EpochMetrics, MetricLog, OptimConfig,
};

pub(crate) use optim::{csv_err, sgd_step};
