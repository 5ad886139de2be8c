use std::collections::BTreeMap;

use super::tensor::{Shape, Tensor};
use crate::error::GradError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Input,
    Const(Tensor),
    MatVec(NodeId, NodeId),
    /// `m * v + b`
    Affine(NodeId, NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Offset(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Hinge(NodeId),
    Square(NodeId),
    SqNorm(NodeId),
    Norm(NodeId),
    Sum(Vec<NodeId>),
    Column(NodeId, usize),
    LogSumExp(NodeId),
    SoftmaxXent(NodeId, usize),
    /// KL(softmax(p / t) || softmax(q / t))
    KlSoftmax(NodeId, NodeId, f64),
    /// Radial projection of a vector onto the ball of a scalar radius.
    Project(NodeId, NodeId),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    shape: Shape,
}

/// Values bound to the input nodes of a [`Graph`].
#[derive(Debug, Clone, Default)]
pub struct Bindings {
    values: BTreeMap<NodeId, Tensor>,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, id: NodeId, value: Tensor) -> &mut Self {
        self.values.insert(id, value);
        self
    }

    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.values.get(&id)
    }

    pub fn get_mut(&mut self, id: NodeId) -> Option<&mut Tensor> {
        self.values.get_mut(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.values.keys().copied()
    }
}

/// Adjoints of every node with respect to the graph output.
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<Option<Tensor>>,
    shapes: Vec<Shape>,
}

impl Gradients {
    /// Adjoint of `id`; exactly zero when `id` does not reach the output.
    pub fn wrt(&self, id: NodeId) -> Tensor {
        match &self.adjoints[id.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(self.shapes[id.0]),
        }
    }

    pub fn take(&mut self, id: NodeId) -> Tensor {
        match self.adjoints[id.0].take() {
            Some(t) => t,
            None => Tensor::zeros(self.shapes[id.0]),
        }
    }
}

/// A scalar-valued computation graph over vectors and matrices.
///
/// Nodes are appended in construction order, so every node's inputs
/// precede it and construction order is a valid topological order.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    values: Vec<Tensor>,
    output: Option<NodeId>,
    evaluated: bool,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn softmax(xs: &[f64], temperature: f64) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| ((x - m) / temperature).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn log_softmax(xs: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = xs.iter().map(|x| x / temperature).collect();
    let lse = log_sum_exp(&scaled);
    scaled.into_iter().map(|v| v - lse).collect()
}

fn norm(xs: &[f64]) -> f64 {
    xs.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.0].shape
    }

    pub fn output(&self) -> Option<NodeId> {
        self.output
    }

    pub fn set_output(&mut self, id: NodeId) -> Result<(), GradError> {
        let shape = self.shape(id);
        if shape != Shape::SCALAR {
            return Err(GradError::ShapeMismatch {
                op: "output",
                expected: Shape::SCALAR,
                found: shape,
            });
        }
        self.output = Some(id);
        Ok(())
    }

    /// Cached value of a node from the last forward pass.
    pub fn value(&self, id: NodeId) -> Option<&Tensor> {
        if self.evaluated {
            self.values.get(id.0)
        } else {
            None
        }
    }

    fn push(&mut self, op: Op, shape: Shape) -> NodeId {
        self.nodes.push(Node { op, shape });
        self.evaluated = false;
        NodeId(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<Shape, GradError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(GradError::ShapeMismatch {
                op,
                expected: sa,
                found: sb,
            });
        }
        Ok(sa)
    }

    fn want_vector(&self, op: &'static str, a: NodeId) -> Result<Shape, GradError> {
        let s = self.shape(a);
        if !s.is_vector() {
            return Err(GradError::ShapeMismatch {
                op,
                expected: Shape::vector(s.rows),
                found: s,
            });
        }
        Ok(s)
    }

    fn want_scalar(&self, op: &'static str, a: NodeId) -> Result<(), GradError> {
        let s = self.shape(a);
        if s != Shape::SCALAR {
            return Err(GradError::ShapeMismatch {
                op,
                expected: Shape::SCALAR,
                found: s,
            });
        }
        Ok(())
    }

    pub fn input(&mut self, shape: Shape) -> NodeId {
        self.push(Op::Input, shape)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        let shape = value.shape();
        self.push(Op::Const(value), shape)
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.constant(Tensor::scalar(value))
    }

    pub fn matvec(&mut self, m: NodeId, v: NodeId) -> Result<NodeId, GradError> {
        let (sm, sv) = (self.shape(m), self.want_vector("matvec", v)?);
        if sm.cols != sv.rows {
            return Err(GradError::ShapeMismatch {
                op: "matvec",
                expected: Shape::vector(sm.cols),
                found: sv,
            });
        }
        Ok(self.push(Op::MatVec(m, v), Shape::vector(sm.rows)))
    }

    pub fn affine(&mut self, m: NodeId, v: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        let (sm, sv, sb) = (
            self.shape(m),
            self.want_vector("affine", v)?,
            self.want_vector("affine", b)?,
        );
        if sm.cols != sv.rows {
            return Err(GradError::ShapeMismatch {
                op: "affine",
                expected: Shape::vector(sm.cols),
                found: sv,
            });
        }
        if sb.rows != sm.rows {
            return Err(GradError::ShapeMismatch {
                op: "affine",
                expected: Shape::vector(sm.rows),
                found: sb,
            });
        }
        Ok(self.push(Op::Affine(m, v, b), Shape::vector(sm.rows)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        let s = self.same_shape("add", a, b)?;
        Ok(self.push(Op::Add(a, b), s))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        let s = self.same_shape("sub", a, b)?;
        Ok(self.push(Op::Sub(a, b), s))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        let s = self.same_shape("mul", a, b)?;
        Ok(self.push(Op::Mul(a, b), s))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let s = self.shape(a);
        self.push(Op::Scale(a, factor), s)
    }

    pub fn offset(&mut self, a: NodeId, shift: f64) -> NodeId {
        let s = self.shape(a);
        self.push(Op::Offset(a, shift), s)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let s = self.shape(a);
        self.push(Op::Tanh(a), s)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let s = self.shape(a);
        self.push(Op::Sigmoid(a), s)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let s = self.shape(a);
        self.push(Op::Exp(a), s)
    }

    /// Elementwise `max{0, x}` with derivative 0 at the kink.
    pub fn hinge(&mut self, a: NodeId) -> NodeId {
        let s = self.shape(a);
        self.push(Op::Hinge(a), s)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let s = self.shape(a);
        self.push(Op::Square(a), s)
    }

    pub fn sq_norm(&mut self, a: NodeId) -> Result<NodeId, GradError> {
        self.want_vector("sq_norm", a)?;
        Ok(self.push(Op::SqNorm(a), Shape::SCALAR))
    }

    /// Euclidean norm; the gradient at the origin is taken as zero.
    pub fn norm(&mut self, a: NodeId) -> Result<NodeId, GradError> {
        self.want_vector("norm", a)?;
        Ok(self.push(Op::Norm(a), Shape::SCALAR))
    }

    /// Sum of same-shaped terms. An empty sum is the scalar 0.
    pub fn sum(&mut self, terms: &[NodeId]) -> Result<NodeId, GradError> {
        if terms.is_empty() {
            return Ok(self.scalar(0.0));
        }
        let s = self.shape(terms[0]);
        for &t in &terms[1..] {
            self.same_shape("sum", terms[0], t)?;
        }
        Ok(self.push(Op::Sum(terms.to_vec()), s))
    }

    pub fn column(&mut self, m: NodeId, col: usize) -> Result<NodeId, GradError> {
        let s = self.shape(m);
        if col >= s.cols {
            return Err(GradError::IndexOutOfRange {
                index: col,
                len: s.cols,
            });
        }
        Ok(self.push(Op::Column(m, col), Shape::vector(s.rows)))
    }

    pub fn log_sum_exp(&mut self, a: NodeId) -> Result<NodeId, GradError> {
        self.want_vector("log_sum_exp", a)?;
        Ok(self.push(Op::LogSumExp(a), Shape::SCALAR))
    }

    /// `-log softmax(logits)[target]`
    pub fn softmax_xent(&mut self, logits: NodeId, target: usize) -> Result<NodeId, GradError> {
        let s = self.want_vector("softmax_xent", logits)?;
        if target >= s.rows {
            return Err(GradError::IndexOutOfRange {
                index: target,
                len: s.rows,
            });
        }
        Ok(self.push(Op::SoftmaxXent(logits, target), Shape::SCALAR))
    }

    /// `KL(softmax(reference / t) || softmax(logits / t))`
    pub fn kl_softmax(
        &mut self,
        reference: NodeId,
        logits: NodeId,
        temperature: f64,
    ) -> Result<NodeId, GradError> {
        self.want_vector("kl_softmax", reference)?;
        self.same_shape("kl_softmax", reference, logits)?;
        if !(temperature > 0.0) {
            return Err(GradError::InvalidArgument("kl temperature must be positive"));
        }
        Ok(self.push(Op::KlSoftmax(reference, logits, temperature), Shape::SCALAR))
    }

    /// `h` if `|h| <= r`, otherwise `h * r / |h|`.
    pub fn project(&mut self, h: NodeId, radius: NodeId) -> Result<NodeId, GradError> {
        let s = self.want_vector("project", h)?;
        self.want_scalar("project", radius)?;
        Ok(self.push(Op::Project(h, radius), s))
    }

    /// Evaluates every node in order and returns the output scalar.
    pub fn forward(&mut self, bindings: &Bindings) -> Result<f64, GradError> {
        let output = self.output.ok_or(GradError::NoOutput)?;
        self.evaluated = false;
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let v = Self::eval_node(i, node, &values, bindings)?;
            if !v.is_finite() {
                return Err(GradError::NonFinite { node: i });
            }
            values.push(v);
        }
        self.values = values;
        self.evaluated = true;
        Ok(self.values[output.0].item())
    }

    fn eval_node(
        i: usize,
        node: &Node,
        values: &[Tensor],
        bindings: &Bindings,
    ) -> Result<Tensor, GradError> {
        let val = |id: NodeId| &values[id.0];
        let map = |id: NodeId, f: &dyn Fn(f64) -> f64| {
            let t = &values[id.0];
            Tensor {
                rows: t.rows,
                cols: t.cols,
                data: t.data.iter().map(|&x| f(x)).collect(),
            }
        };
        let zip = |a: NodeId, b: NodeId, f: &dyn Fn(f64, f64) -> f64| {
            let (ta, tb) = (&values[a.0], &values[b.0]);
            Tensor {
                rows: ta.rows,
                cols: ta.cols,
                data: ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect(),
            }
        };
        Ok(match &node.op {
            Op::Input => {
                let t = bindings
                    .get(NodeId(i))
                    .ok_or(GradError::UnboundInput { node: i })?;
                if t.shape() != node.shape {
                    return Err(GradError::ShapeMismatch {
                        op: "input",
                        expected: node.shape,
                        found: t.shape(),
                    });
                }
                t.clone()
            }
            Op::Const(t) => t.clone(),
            Op::MatVec(m, v) => Tensor::vector(matvec(val(*m), &val(*v).data)),
            Op::Affine(m, v, b) => {
                let mut out = matvec(val(*m), &val(*v).data);
                for (o, bb) in out.iter_mut().zip(&val(*b).data) {
                    *o += bb;
                }
                Tensor::vector(out)
            }
            Op::Add(a, b) => zip(*a, *b, &|x, y| x + y),
            Op::Sub(a, b) => zip(*a, *b, &|x, y| x - y),
            Op::Mul(a, b) => zip(*a, *b, &|x, y| x * y),
            Op::Scale(a, c) => {
                let c = *c;
                map(*a, &move |x| x * c)
            }
            Op::Offset(a, c) => {
                let c = *c;
                map(*a, &move |x| x + c)
            }
            Op::Tanh(a) => map(*a, &f64::tanh),
            Op::Sigmoid(a) => map(*a, &sigmoid),
            Op::Exp(a) => map(*a, &f64::exp),
            Op::Hinge(a) => map(*a, &|x| if x > 0.0 { x } else { 0.0 }),
            Op::Square(a) => map(*a, &|x| x * x),
            Op::SqNorm(a) => Tensor::scalar(val(*a).data.iter().map(|x| x * x).sum()),
            Op::Norm(a) => Tensor::scalar(norm(&val(*a).data)),
            Op::Sum(terms) => {
                let mut acc = val(terms[0]).clone();
                for t in &terms[1..] {
                    acc.add_assign(val(*t));
                }
                acc
            }
            Op::Column(m, c) => {
                let t = val(*m);
                Tensor::vector((0..t.rows).map(|r| t.data[r * t.cols + c]).collect())
            }
            Op::LogSumExp(a) => Tensor::scalar(log_sum_exp(&val(*a).data)),
            Op::SoftmaxXent(a, target) => {
                let x = &val(*a).data;
                Tensor::scalar(log_sum_exp(x) - x[*target])
            }
            Op::KlSoftmax(p, q, t) => Tensor::scalar(kl_softmax(&val(*p).data, &val(*q).data, *t)),
            Op::Project(h, r) => {
                let (hv, rv) = (&val(*h).data, val(*r).item());
                let nh = norm(hv);
                if nh <= rv {
                    val(*h).clone()
                } else {
                    let s = rv / nh;
                    Tensor::vector(hv.iter().map(|x| x * s).collect())
                }
            }
        })
    }

    /// Reverse sweep from the output. Requires a prior [`Graph::forward`].
    pub fn backward(&self) -> Result<Gradients, GradError> {
        let output = self.output.ok_or(GradError::NoOutput)?;
        if !self.evaluated {
            return Err(GradError::NotEvaluated);
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adj[output.0] = Some(Tensor::scalar(1.0));

        fn acc(adj: &mut [Option<Tensor>], id: NodeId, shape: Shape, f: impl FnOnce(&mut [f64])) {
            let slot = adj[id.0].get_or_insert_with(|| Tensor::zeros(shape));
            f(&mut slot.data);
        }

        for i in (0..=output.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            let val = |id: NodeId| &self.values[id.0];
            let sh = |id: NodeId| self.nodes[id.0].shape;
            match &node.op {
                Op::Input | Op::Const(_) => {}
                Op::MatVec(m, v) | Op::Affine(m, v, _) => {
                    let (mt, vt) = (val(*m), val(*v));
                    acc(&mut adj, *m, sh(*m), |dm| {
                        for r in 0..mt.rows {
                            let gr = g.data[r];
                            if gr != 0.0 {
                                let row = &mut dm[r * mt.cols..(r + 1) * mt.cols];
                                for (d, x) in row.iter_mut().zip(&vt.data) {
                                    *d += gr * x;
                                }
                            }
                        }
                    });
                    acc(&mut adj, *v, sh(*v), |dv| {
                        for r in 0..mt.rows {
                            let gr = g.data[r];
                            let row = &mt.data[r * mt.cols..(r + 1) * mt.cols];
                            for (d, w) in dv.iter_mut().zip(row) {
                                *d += gr * w;
                            }
                        }
                    });
                    if let Op::Affine(_, _, b) = &node.op {
                        acc(&mut adj, *b, sh(*b), |db| add_into(db, &g.data));
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut adj, *a, sh(*a), |d| add_into(d, &g.data));
                    acc(&mut adj, *b, sh(*b), |d| add_into(d, &g.data));
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, *a, sh(*a), |d| add_into(d, &g.data));
                    acc(&mut adj, *b, sh(*b), |d| {
                        for (x, y) in d.iter_mut().zip(&g.data) {
                            *x -= y;
                        }
                    });
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (val(*a), val(*b));
                    acc(&mut adj, *a, sh(*a), |d| {
                        for ((x, gg), y) in d.iter_mut().zip(&g.data).zip(&tb.data) {
                            *x += gg * y;
                        }
                    });
                    acc(&mut adj, *b, sh(*b), |d| {
                        for ((x, gg), y) in d.iter_mut().zip(&g.data).zip(&ta.data) {
                            *x += gg * y;
                        }
                    });
                }
                Op::Scale(a, c) => acc(&mut adj, *a, sh(*a), |d| {
                    for (x, gg) in d.iter_mut().zip(&g.data) {
                        *x += gg * c;
                    }
                }),
                Op::Offset(a, _) => acc(&mut adj, *a, sh(*a), |d| add_into(d, &g.data)),
                Op::Tanh(a) => {
                    let y = &self.values[i].data;
                    acc(&mut adj, *a, sh(*a), |d| {
                        for ((x, gg), yy) in d.iter_mut().zip(&g.data).zip(y) {
                            *x += gg * (1.0 - yy * yy);
                        }
                    })
                }
                Op::Sigmoid(a) => {
                    let y = &self.values[i].data;
                    acc(&mut adj, *a, sh(*a), |d| {
                        for ((x, gg), yy) in d.iter_mut().zip(&g.data).zip(y) {
                            *x += gg * yy * (1.0 - yy);
                        }
                    })
                }
                Op::Exp(a) => {
                    let y = &self.values[i].data;
                    acc(&mut adj, *a, sh(*a), |d| {
                        for ((x, gg), yy) in d.iter_mut().zip(&g.data).zip(y) {
                            *x += gg * yy;
                        }
                    })
                }
                Op::Hinge(a) => {
                    let xin = &val(*a).data;
                    acc(&mut adj, *a, sh(*a), |d| {
                        for ((x, gg), v) in d.iter_mut().zip(&g.data).zip(xin) {
                            if *v > 0.0 {
                                *x += gg;
                            }
                        }
                    })
                }
                Op::Square(a) => {
                    let xin = &val(*a).data;
                    acc(&mut adj, *a, sh(*a), |d| {
                        for ((x, gg), v) in d.iter_mut().zip(&g.data).zip(xin) {
                            *x += 2.0 * gg * v;
                        }
                    })
                }
                Op::SqNorm(a) => {
                    let (gg, xin) = (g.item(), &val(*a).data);
                    acc(&mut adj, *a, sh(*a), |d| {
                        for (x, v) in d.iter_mut().zip(xin) {
                            *x += 2.0 * gg * v;
                        }
                    })
                }
                Op::Norm(a) => {
                    let (gg, xin, y) = (g.item(), &val(*a).data, self.values[i].item());
                    if y > 0.0 {
                        acc(&mut adj, *a, sh(*a), |d| {
                            for (x, v) in d.iter_mut().zip(xin) {
                                *x += gg * v / y;
                            }
                        })
                    }
                }
                Op::Sum(terms) => {
                    for t in terms {
                        acc(&mut adj, *t, sh(*t), |d| add_into(d, &g.data));
                    }
                }
                Op::Column(m, c) => {
                    let cols = sh(*m).cols;
                    acc(&mut adj, *m, sh(*m), |d| {
                        for (r, gg) in g.data.iter().enumerate() {
                            d[r * cols + c] += gg;
                        }
                    })
                }
                Op::LogSumExp(a) => {
                    let p = softmax(&val(*a).data, 1.0);
                    let gg = g.item();
                    acc(&mut adj, *a, sh(*a), |d| {
                        for (x, pp) in d.iter_mut().zip(&p) {
                            *x += gg * pp;
                        }
                    })
                }
                Op::SoftmaxXent(a, target) => {
                    let p = softmax(&val(*a).data, 1.0);
                    let gg = g.item();
                    acc(&mut adj, *a, sh(*a), |d| {
                        for (k, (x, pp)) in d.iter_mut().zip(&p).enumerate() {
                            let ind = if k == *target { 1.0 } else { 0.0 };
                            *x += gg * (pp - ind);
                        }
                    })
                }
                Op::KlSoftmax(pn, qn, t) => {
                    // KL = sum_k p_k (log p_k - log q_k), p = softmax(a/t), q = softmax(b/t)
                    let (xa, xb) = (&val(*pn).data, &val(*qn).data);
                    let p = softmax(xa, *t);
                    let q = softmax(xb, *t);
                    let lp = log_softmax(xa, *t);
                    let lq = log_softmax(xb, *t);
                    let kl: f64 = p.iter().zip(lp.iter().zip(&lq)).map(|(pp, (a, b))| pp * (a - b)).sum();
                    let gg = g.item();
                    acc(&mut adj, *qn, sh(*qn), |d| {
                        for (x, (pp, qq)) in d.iter_mut().zip(p.iter().zip(&q)) {
                            *x += gg * (qq - pp) / t;
                        }
                    });
                    acc(&mut adj, *pn, sh(*pn), |d| {
                        for (x, (pp, (a, b))) in d.iter_mut().zip(p.iter().zip(lp.iter().zip(&lq))) {
                            *x += gg * pp * ((a - b) - kl) / t;
                        }
                    });
                }
                Op::Project(h, r) => {
                    let (hv, rv) = (&val(*h).data, val(*r).item());
                    let nh = norm(hv);
                    if nh <= rv {
                        acc(&mut adj, *h, sh(*h), |d| add_into(d, &g.data));
                    } else {
                        // y = r h / |h|; dy/dh = (r/|h|)(I - u u^T), dy/dr = u
                        let u: Vec<f64> = hv.iter().map(|x| x / nh).collect();
                        let gu: f64 = g.data.iter().zip(&u).map(|(a, b)| a * b).sum();
                        let s = rv / nh;
                        acc(&mut adj, *h, sh(*h), |d| {
                            for ((x, gg), uu) in d.iter_mut().zip(&g.data).zip(&u) {
                                *x += s * (gg - gu * uu);
                            }
                        });
                        acc(&mut adj, *r, sh(*r), |d| d[0] += gu);
                    }
                }
            }
            adj[i] = Some(g);
        }

        Ok(Gradients {
            adjoints: adj,
            shapes: self.nodes.iter().map(|n| n.shape).collect(),
        })
    }

    /// Smallest distance from a non-differentiable point over all hinge and
    /// projection nodes in the last forward pass. `f64::INFINITY` when the
    /// graph has none.
    pub fn kink_margin(&self) -> Option<f64> {
        if !self.evaluated {
            return None;
        }
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::Hinge(a) => {
                    for v in &self.values[a.0].data {
                        margin = margin.min(v.abs());
                    }
                }
                Op::Project(h, r) => {
                    let d = norm(&self.values[h.0].data) - self.values[r.0].item();
                    margin = margin.min(d.abs());
                }
                _ => {}
            }
        }
        Some(margin)
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn matvec(m: &Tensor, v: &[f64]) -> Vec<f64> {
    (0..m.rows)
        .map(|r| {
            m.data[r * m.cols..(r + 1) * m.cols]
                .iter()
                .zip(v)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect()
}

pub(crate) fn kl_softmax(p_logits: &[f64], q_logits: &[f64], temperature: f64) -> f64 {
    let p = softmax(p_logits, temperature);
    let lp = log_softmax(p_logits, temperature);
    let lq = log_softmax(q_logits, temperature);
    let kl: f64 = p.iter().zip(lp.iter().zip(&lq)).map(|(pp, (a, b))| pp * (a - b)).sum();
    kl.max(0.0)
}
