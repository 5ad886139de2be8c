//! Differentiable rollouts built on [`numgrad::Graph`].

use crate::dynamics::{CellParams, ConstraintConfig, Enforcement, ModelDims, PathMode};
use crate::error::Result;
use crate::numgrad::{Bindings, Graph, NodeId, Shape, Tensor};

/// Input nodes for the nine parameter tensors, in [`CellParams::tensors`] order.
#[derive(Debug, Clone, Copy)]
pub struct ParamNodes {
    pub w_h: NodeId,
    pub w_x: NodeId,
    pub b: NodeId,
    pub u_h: NodeId,
    pub u_x: NodeId,
    pub c: NodeId,
    pub w_o: NodeId,
    pub b_o: NodeId,
    pub embed: NodeId,
    dims: ModelDims,
}

impl ParamNodes {
    pub fn declare(g: &mut Graph, dims: ModelDims) -> Self {
        let s = CellParams::shapes(dims);
        ParamNodes {
            w_h: g.input(s[0]),
            w_x: g.input(s[1]),
            b: g.input(s[2]),
            u_h: g.input(s[3]),
            u_x: g.input(s[4]),
            c: g.input(s[5]),
            w_o: g.input(s[6]),
            b_o: g.input(s[7]),
            embed: g.input(s[8]),
            dims,
        }
    }

    pub fn ids(&self) -> [NodeId; 9] {
        [
            self.w_h, self.w_x, self.b, self.u_h, self.u_x, self.c, self.w_o, self.b_o, self.embed,
        ]
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn bind(&self, params: &CellParams) -> Bindings {
        let mut b = Bindings::new();
        for (id, t) in self.ids().into_iter().zip(params.tensors()) {
            b.bind(id, t.clone());
        }
        b
    }
}

/// Node handles produced by [`build_rollout`].
#[derive(Debug, Clone, Default)]
pub struct GraphTrajectory {
    /// `h_0 .. h_T`
    pub states: Vec<NodeId>,
    /// per step, present only when constraints are tracked
    pub burdens: Vec<NodeId>,
    pub radii: Vec<NodeId>,
    pub logits: Vec<NodeId>,
}

/// How much of the constraint machinery to materialize.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tracking {
    /// Plain recurrent cell; no burden, load or radius nodes.
    None,
    /// Burden, load and radius nodes for every step.
    Constraints,
}

/// Unrolls the cell over `tokens` inside `g`. `noise`, when given, is added
/// to each step's embedding. Logits are emitted only where `emit_logits`
/// returns true.
pub fn build_rollout(
    g: &mut Graph,
    p: &ParamNodes,
    cfg: &ConstraintConfig,
    tokens: &[usize],
    noise: Option<&[Vec<f64>]>,
    tracking: Tracking,
    emit_logits: &dyn Fn(usize) -> bool,
) -> Result<GraphTrajectory> {
    let n = p.dims.hidden;
    let hard = cfg.enforcement == Enforcement::Hard;
    let track = hard || tracking == Tracking::Constraints;
    let mut out = GraphTrajectory::default();
    let mut h = g.constant(Tensor::zeros(Shape::vector(n)));
    out.states.push(h);
    let mut load = if track { Some(g.scalar(0.0)) } else { None };
    let mut h_sq = if track { Some(g.sq_norm(h)?) } else { None };

    for (t, &tok) in tokens.iter().enumerate() {
        let mut e = g.column(p.embed, tok)?;
        if let Some(noise) = noise {
            let eps = g.constant(Tensor::vector(noise[t].clone()));
            e = g.add(e, eps)?;
        }
        let gh = g.matvec(p.u_h, h)?;
        let gx = g.affine(p.u_x, e, p.c)?;
        let gate_pre = g.add(gh, gx)?;
        let z = g.sigmoid(gate_pre);
        let ch = g.matvec(p.w_h, h)?;
        let cx = g.affine(p.w_x, e, p.b)?;
        let cand_pre = g.add(ch, cx)?;
        let cand = g.tanh(cand_pre);
        let diff = g.sub(cand, h)?;
        let upd = g.mul(z, diff)?;
        let mut next = g.add(h, upd)?;

        if let Some(l) = load {
            let radius = radius_node(g, l, cfg);
            if hard {
                next = g.project(next, radius)?;
            }
            let next_sq = g.sq_norm(next)?;
            let disp_vec = g.sub(next, h)?;
            let disp = g.sq_norm(disp_vec)?;
            let growth_pre = g.sub(next_sq, h_sq.expect("tracked"))?;
            let growth = g.hinge(growth_pre);
            let inv_n = 1.0 / n as f64;
            let bd = g.scale(disp, cfg.w_disp * inv_n);
            let bg = g.scale(growth, cfg.w_grow * inv_n);
            let burden = g.add(bd, bg)?;
            let new_load = match cfg.path_mode {
                PathMode::Uniform => {
                    let inc = g.scale(burden, cfg.alpha);
                    g.add(l, inc)?
                }
                PathMode::Discounted => {
                    let decayed = g.scale(l, cfg.lambda_path);
                    g.add(decayed, burden)?
                }
            };
            out.burdens.push(burden);
            out.radii.push(radius);
            load = Some(new_load);
            h_sq = Some(next_sq);
        }

        if emit_logits(t) {
            let logits = g.affine(p.w_o, next, p.b_o)?;
            out.logits.push(logits);
        }
        out.states.push(next);
        h = next;
    }
    Ok(out)
}

/// `max{r_min, r0·exp(−kappa·L)}` as `r_min + max{0, r0·exp(−kappa·L) − r_min}`.
fn radius_node(g: &mut Graph, load: NodeId, cfg: &ConstraintConfig) -> NodeId {
    let scaled = g.scale(load, -cfg.kappa);
    let decay = g.exp(scaled);
    let r = g.scale(decay, cfg.r0);
    let above = g.offset(r, -cfg.r_min);
    let slack = g.hinge(above);
    g.offset(slack, cfg.r_min)
}

/// `(max{0, |h| − r})²`
pub fn feasibility_penalty_node(g: &mut Graph, h: NodeId, radius: NodeId) -> Result<NodeId> {
    let norm = g.norm(h)?;
    let excess = g.sub(norm, radius)?;
    let pos = g.hinge(excess);
    Ok(g.square(pos))
}
