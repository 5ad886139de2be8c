use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{build_rollout, feasibility_penalty_node, ParamNodes, Tracking};
use crate::dynamics::{
    feasibility_penalty, rollout, rollout_embedded, CellParams, ConstraintConfig, TrajectoryRecord,
};
use crate::error::{Error, GradError, Result};
use crate::numgrad::{Gradients, Graph, NodeId, Tensor};
use crate::tasks::{embedding_noise, Batch, Example};

/// Multipliers of the burden hinge, feasibility penalty and stability terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl ObjectiveWeights {
    pub const BASELINE: ObjectiveWeights = ObjectiveWeights {
        lambda1: 0.0,
        lambda2: 0.0,
        lambda3: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        if [self.lambda1, self.lambda2, self.lambda3]
            .iter()
            .any(|l| !(*l >= 0.0) || !l.is_finite())
        {
            return Err(Error::config("objective weights must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn is_baseline(&self) -> bool {
        *self == Self::BASELINE
    }
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        ObjectiveWeights {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 0.5,
        }
    }
}

/// Batch-averaged loss components and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub task: f64,
    pub hinge: f64,
    pub feasibility: f64,
    pub stability: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn recombine(&self, w: &ObjectiveWeights) -> f64 {
        self.task + w.lambda1 * self.hinge + w.lambda2 * self.feasibility + w.lambda3 * self.stability
    }
}

/// `Σ_t max{0, b_t − B}`
pub fn burden_hinge(burdens: &[f64], threshold: f64) -> f64 {
    burdens.iter().map(|b| (b - threshold).max(0.0)).sum()
}

/// `Σ_t (max{0, |h_{t+1}| − r_t})²` over a recorded trajectory.
pub fn trajectory_feasibility(rec: &TrajectoryRecord) -> f64 {
    rec.states[1..]
        .iter()
        .zip(&rec.radii)
        .map(|(h, r)| feasibility_penalty(h, *r))
        .sum()
}

pub(crate) fn softmax_xent(logits: &[f64], target: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    lse - logits[target]
}

/// Mean cross-entropy over an example's target positions.
pub fn example_task_loss(rec: &TrajectoryRecord, ex: &Example) -> f64 {
    let total: f64 = ex
        .target_positions
        .iter()
        .zip(&ex.labels)
        .map(|(&p, &y)| softmax_xent(&rec.logits[p], y))
        .sum();
    total / ex.target_positions.len() as f64
}

fn final_divergence(clean: &[f64], perturbed: &[f64]) -> f64 {
    let sq: f64 = clean.iter().zip(perturbed).map(|(a, b)| (a - b) * (a - b)).sum();
    sq / clean.len() as f64
}

/// Draws one perturbation per step of every example, in batch order.
pub fn draw_stability_noise<R: Rng + ?Sized>(
    batch: &Batch,
    embed_dim: usize,
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<Vec<Vec<f64>>>> {
    batch
        .examples
        .iter()
        .map(|ex| embedding_noise(ex.tokens.len(), embed_dim, sigma, rng))
        .collect()
}

/// Mean over the batch of `|h_T − h̃_T|²/n`, where `h̃` is driven by
/// embeddings perturbed with `N(0, sigma²)` noise.
pub fn stability_loss<R: Rng + ?Sized>(
    params: &CellParams,
    cfg: &ConstraintConfig,
    batch: &Batch,
    sigma: f64,
    rng: &mut R,
) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let noise = draw_stability_noise(batch, params.dims().embed, sigma, rng)?;
    let mut acc = 0.0;
    for (ex, eps) in batch.examples.iter().zip(&noise) {
        let clean = rollout(params, cfg, &ex.tokens)?;
        let inputs: Vec<Vec<f64>> = params
            .embed_tokens(&ex.tokens)?
            .into_iter()
            .zip(eps)
            .map(|(e, n)| e.iter().zip(n).map(|(a, b)| a + b).collect())
            .collect();
        let pert = rollout_embedded(params, cfg, &inputs)?;
        acc += final_divergence(clean.final_state(), pert.final_state());
    }
    Ok(acc / batch.len() as f64)
}

/// Objective components from plain rollouts (no graph), with the stability
/// term evaluated on the supplied noise.
pub fn evaluate_components(
    params: &CellParams,
    cfg: &ConstraintConfig,
    weights: &ObjectiveWeights,
    batch: &Batch,
    noise: &[Vec<Vec<f64>>],
) -> Result<(LossBreakdown, Vec<TrajectoryRecord>)> {
    let mut task = 0.0;
    let mut hinge = 0.0;
    let mut feas = 0.0;
    let mut stab = 0.0;
    let mut records = Vec::with_capacity(batch.len());
    for (ex, eps) in batch.examples.iter().zip(noise) {
        let rec = rollout(params, cfg, &ex.tokens)?;
        task += example_task_loss(&rec, ex);
        hinge += burden_hinge(&rec.burdens, cfg.threshold);
        feas += trajectory_feasibility(&rec);
        let inputs: Vec<Vec<f64>> = params
            .embed_tokens(&ex.tokens)?
            .into_iter()
            .zip(eps)
            .map(|(e, n)| e.iter().zip(n).map(|(a, b)| a + b).collect())
            .collect();
        let pert = rollout_embedded(params, cfg, &inputs)?;
        stab += final_divergence(rec.final_state(), pert.final_state());
        records.push(rec);
    }
    let m = batch.len().max(1) as f64;
    let mut out = LossBreakdown {
        task: task / m,
        hinge: hinge / m,
        feasibility: feas / m,
        stability: stab / m,
        total: 0.0,
    };
    out.total = out.recombine(weights);
    Ok((out, records))
}

/// Node ranges used to attribute a non-finite forward value to a component.
#[derive(Debug, Clone, Copy)]
struct Regions {
    rollout_end: usize,
    task_end: usize,
    hinge_end: usize,
    feas_end: usize,
}

/// The objective over one batch as a differentiable graph.
#[derive(Debug)]
pub struct ObjectiveGraph {
    pub graph: Graph,
    pub params: ParamNodes,
    pub task: NodeId,
    pub hinge: NodeId,
    pub feasibility: NodeId,
    pub stability: NodeId,
    pub total: NodeId,
    regions: Regions,
}

impl ObjectiveGraph {
    /// Full objective: task loss plus all three weighted constraint terms.
    /// `noise` holds the stability perturbation for every example and step.
    pub fn build(
        params: &CellParams,
        cfg: &ConstraintConfig,
        weights: &ObjectiveWeights,
        batch: &Batch,
        noise: &[Vec<Vec<f64>>],
    ) -> Result<Self> {
        let mut g = Graph::new();
        let p = ParamNodes::declare(&mut g, params.dims());
        let m = batch.len().max(1) as f64;
        let n = params.hidden() as f64;

        let mut task_terms = Vec::new();
        let mut hinge_terms = Vec::new();
        let mut feas_terms = Vec::new();
        let mut stab_terms = Vec::new();
        let mut trajs = Vec::new();
        for ex in &batch.examples {
            let targets = &ex.target_positions;
            let traj = build_rollout(
                &mut g,
                &p,
                cfg,
                &ex.tokens,
                None,
                Tracking::Constraints,
                &|t| targets.contains(&t),
            )?;
            trajs.push(traj);
        }
        let rollout_end = g.len();
        for (ex, traj) in batch.examples.iter().zip(&trajs) {
            let xent: Vec<NodeId> = traj
                .logits
                .iter()
                .zip(&ex.labels)
                .map(|(l, y)| g.softmax_xent(*l, *y))
                .collect::<std::result::Result<_, GradError>>()?;
            let s = g.sum(&xent)?;
            task_terms.push(g.scale(s, 1.0 / ex.target_positions.len() as f64));
        }
        let task_sum = g.sum(&task_terms)?;
        let task = g.scale(task_sum, 1.0 / m);
        let task_end = g.len();

        for traj in &trajs {
            let per_step: Vec<NodeId> = traj
                .burdens
                .iter()
                .map(|b| {
                    let over = g.offset(*b, -cfg.threshold);
                    g.hinge(over)
                })
                .collect();
            hinge_terms.push(g.sum(&per_step)?);
        }
        let hinge_sum = g.sum(&hinge_terms)?;
        let hinge = g.scale(hinge_sum, 1.0 / m);
        let hinge_end = g.len();

        for traj in &trajs {
            let mut per_step = Vec::with_capacity(traj.radii.len());
            for (h, r) in traj.states[1..].iter().zip(&traj.radii) {
                per_step.push(feasibility_penalty_node(&mut g, *h, *r)?);
            }
            feas_terms.push(g.sum(&per_step)?);
        }
        let feas_sum = g.sum(&feas_terms)?;
        let feasibility = g.scale(feas_sum, 1.0 / m);
        let feas_end = g.len();

        for ((ex, traj), eps) in batch.examples.iter().zip(&trajs).zip(noise) {
            let pert = build_rollout(&mut g, &p, cfg, &ex.tokens, Some(eps), Tracking::None, &|_| false)?;
            let clean_final = *traj.states.last().expect("final state");
            let pert_final = *pert.states.last().expect("final state");
            let d = g.sub(clean_final, pert_final)?;
            let sq = g.sq_norm(d)?;
            stab_terms.push(g.scale(sq, 1.0 / n));
        }
        let stab_sum = g.sum(&stab_terms)?;
        let stability = g.scale(stab_sum, 1.0 / m);

        let wh = g.scale(hinge, weights.lambda1);
        let wf = g.scale(feasibility, weights.lambda2);
        let ws = g.scale(stability, weights.lambda3);
        let total = g.sum(&[task, wh, wf, ws])?;
        g.set_output(total)?;
        Ok(ObjectiveGraph {
            graph: g,
            params: p,
            task,
            hinge,
            feasibility,
            stability,
            total,
            regions: Regions {
                rollout_end,
                task_end,
                hinge_end,
                feas_end,
            },
        })
    }

    fn component_of(&self, node: usize) -> &'static str {
        let r = &self.regions;
        if node < r.rollout_end {
            "dynamics"
        } else if node < r.task_end {
            "task"
        } else if node < r.hinge_end {
            "hinge"
        } else if node < r.feas_end {
            "feasibility"
        } else {
            "stability"
        }
    }

    /// Forward pass; on a non-finite value reports the offending component.
    pub fn forward(&mut self, params: &CellParams, epoch: usize) -> Result<LossBreakdown> {
        let bindings = self.params.bind(params);
        match self.graph.forward(&bindings) {
            Ok(_) => {}
            Err(GradError::NonFinite { node }) => {
                return Err(Error::NonFiniteLoss {
                    component: self.component_of(node),
                    epoch,
                })
            }
            Err(e) => return Err(e.into()),
        }
        let v = |id: NodeId| self.graph.value(id).expect("evaluated").item();
        Ok(LossBreakdown {
            task: v(self.task),
            hinge: v(self.hinge),
            feasibility: v(self.feasibility),
            stability: v(self.stability),
            total: v(self.total),
        })
    }

    pub fn gradients(&self) -> Result<Vec<Tensor>> {
        let mut grads: Gradients = self.graph.backward()?;
        Ok(self.params.ids().iter().map(|id| grads.take(*id)).collect())
    }
}

/// Graph containing only the mean task cross-entropy; no constraint node is
/// ever constructed. Used as the reference path for the baseline teacher.
pub fn task_only_graph(params: &CellParams, cfg: &ConstraintConfig, batch: &Batch) -> Result<(Graph, ParamNodes)> {
    let mut g = Graph::new();
    let p = ParamNodes::declare(&mut g, params.dims());
    let m = batch.len().max(1) as f64;
    let soft = cfg.with_enforcement(crate::dynamics::Enforcement::Soft);
    let mut trajs = Vec::new();
    for ex in &batch.examples {
        let targets = &ex.target_positions;
        trajs.push(build_rollout(&mut g, &p, &soft, &ex.tokens, None, Tracking::None, &|t| {
            targets.contains(&t)
        })?);
    }
    let mut task_terms = Vec::new();
    for (ex, traj) in batch.examples.iter().zip(&trajs) {
        let xent: Vec<NodeId> = traj
            .logits
            .iter()
            .zip(&ex.labels)
            .map(|(l, y)| g.softmax_xent(*l, *y))
            .collect::<std::result::Result<_, GradError>>()?;
        let s = g.sum(&xent)?;
        task_terms.push(g.scale(s, 1.0 / ex.target_positions.len() as f64));
    }
    let task_sum = g.sum(&task_terms)?;
    let task = g.scale(task_sum, 1.0 / m);
    g.set_output(task)?;
    Ok((g, p))
}

/// Weighted objective on one batch, evaluated through the graph.
/// The stability perturbation is drawn from `rng`.
pub fn total_loss<R: Rng + ?Sized>(
    params: &CellParams,
    cfg: &ConstraintConfig,
    weights: &ObjectiveWeights,
    sigma_stab: f64,
    batch: &Batch,
    rng: &mut R,
) -> Result<LossBreakdown> {
    let noise = draw_stability_noise(batch, params.dims().embed, sigma_stab, rng)?;
    let mut og = ObjectiveGraph::build(params, cfg, weights, batch, &noise)?;
    og.forward(params, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn burden_hinge_examples() {
        assert_eq!(burden_hinge(&[0.1, 0.2], 0.5), 0.0);
        assert!((burden_hinge(&[0.6, 0.4], 0.5) - 0.1).abs() < 1e-15);
        assert_eq!(burden_hinge(&[], 0.5), 0.0);
    }

    #[test]
    fn weights_validate() {
        ObjectiveWeights::default().validate().unwrap();
        assert!(ObjectiveWeights {
            lambda1: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(ObjectiveWeights::BASELINE.is_baseline());
    }

    #[test]
    fn xent_of_uniform_logits() {
        assert!((softmax_xent(&[0.0; 4], 2) - 4f64.ln()).abs() < 1e-15);
    }
}
