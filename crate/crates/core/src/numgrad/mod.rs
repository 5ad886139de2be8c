//! Reverse-mode differentiation over small vector/matrix graphs.
//!
//! A [`Graph`] is built once per evaluation: inputs are declared with
//! [`Graph::input`], values are supplied through [`Bindings`] at
//! [`Graph::forward`], and [`Graph::backward`] returns the adjoint of every
//! node. All arithmetic is `f64`. The hinge `max{0, x}` has derivative 0 at
//! `x = 0`.
//!
//! ```
//! use burdenlab::numgrad::{Bindings, Graph, Shape, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.input(Shape::SCALAR);
//! let y = g.mul(x, x).unwrap();
//! g.set_output(y).unwrap();
//! let mut b = Bindings::new();
//! b.bind(x, Tensor::scalar(3.0));
//! assert_eq!(g.forward(&b).unwrap(), 9.0);
//! assert_eq!(g.backward().unwrap().wrt(x).item(), 6.0);
//! ```

mod check;
mod graph;
mod tensor;

pub use check::{grad_check, relative_error, GradCheckReport, GradEntry};
pub use graph::{Bindings, Gradients, Graph, NodeId};
pub(crate) use graph::kl_softmax;
pub use tensor::{Shape, Tensor};

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_graph(build: impl Fn(&mut Graph, NodeId) -> NodeId) -> (Graph, NodeId) {
        let mut g = Graph::new();
        let x = g.input(Shape::SCALAR);
        let y = build(&mut g, x);
        g.set_output(y).unwrap();
        (g, x)
    }

    fn bind(x: NodeId, v: f64) -> Bindings {
        let mut b = Bindings::new();
        b.bind(x, Tensor::scalar(v));
        b
    }

    #[test]
    fn square_value_and_gradient() {
        let (mut g, x) = scalar_graph(|g, x| g.mul(x, x).unwrap());
        assert_eq!(g.forward(&bind(x, 3.0)).unwrap(), 9.0);
        assert_eq!(g.backward().unwrap().wrt(x).item(), 6.0);
    }

    #[test]
    fn tanh_at_origin() {
        let (mut g, x) = scalar_graph(|g, x| g.tanh(x));
        assert_eq!(g.forward(&bind(x, 0.0)).unwrap(), 0.0);
        assert_eq!(g.backward().unwrap().wrt(x).item(), 1.0);
    }

    #[test]
    fn logsumexp_of_zeros_is_ln2() {
        let mut g = Graph::new();
        let v = g.constant(Tensor::vector(vec![0.0, 0.0]));
        let y = g.log_sum_exp(v).unwrap();
        g.set_output(y).unwrap();
        let out = g.forward(&Bindings::new()).unwrap();
        assert!((out - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn hinge_kink_has_zero_derivative() {
        let threshold = 0.5;
        let (mut g, x) = scalar_graph(|g, x| {
            let shifted = g.offset(x, -threshold);
            g.hinge(shifted)
        });
        assert_eq!(g.forward(&bind(x, threshold)).unwrap(), 0.0);
        assert_eq!(g.backward().unwrap().wrt(x).item(), 0.0);
        g.forward(&bind(x, threshold + 1.0)).unwrap();
        assert_eq!(g.backward().unwrap().wrt(x).item(), 1.0);
    }

    #[test]
    fn backward_before_forward_fails() {
        let (g, _) = scalar_graph(|g, x| g.tanh(x));
        assert!(matches!(g.backward(), Err(crate::error::GradError::NotEvaluated)));
    }

    #[test]
    fn unreachable_nodes_have_zero_adjoint() {
        let mut g = Graph::new();
        let x = g.input(Shape::SCALAR);
        let unused = g.input(Shape::vector(3));
        let y = g.square(x);
        g.set_output(y).unwrap();
        let mut b = bind(x, 2.0);
        b.bind(unused, Tensor::vector(vec![1.0, 2.0, 3.0]));
        g.forward(&b).unwrap();
        let grads = g.backward().unwrap();
        assert_eq!(grads.wrt(unused).data, vec![0.0; 3]);
        assert_eq!(grads.wrt(y).item(), 1.0);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut g = Graph::new();
        let a = g.input(Shape::vector(2));
        let b = g.input(Shape::vector(3));
        assert!(g.add(a, b).is_err());
        let m = g.input(Shape::matrix(2, 2));
        assert!(g.matvec(m, b).is_err());
        let y = g.sq_norm(a).unwrap();
        g.set_output(y).unwrap();
        let mut bind = Bindings::new();
        bind.bind(a, Tensor::vector(vec![1.0, 2.0, 3.0]));
        assert!(g.forward(&bind).is_err());
    }

    #[test]
    fn non_finite_intermediate_is_an_error() {
        let (mut g, x) = scalar_graph(|g, x| g.exp(x));
        let err = g.forward(&bind(x, 1e6)).unwrap_err();
        assert!(matches!(err, crate::error::GradError::NonFinite { .. }));
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let mut g = Graph::new();
        let m = g.input(Shape::matrix(3, 3));
        let v = g.input(Shape::vector(3));
        let mv = g.matvec(m, v).unwrap();
        let t = g.tanh(mv);
        let y = g.log_sum_exp(t).unwrap();
        g.set_output(y).unwrap();
        let mut b = Bindings::new();
        b.bind(m, Tensor::matrix(3, 3, (0..9).map(|i| (i as f64 * 0.37).sin()).collect()));
        b.bind(v, Tensor::vector(vec![0.3, -1.2, 0.9]));
        let first = g.forward(&b).unwrap();
        let second = g.forward(&b).unwrap();
        assert_eq!(first.to_bits(), second.to_bits());
    }

    #[test]
    fn grad_check_on_square() {
        let (mut g, x) = scalar_graph(|g, x| g.mul(x, x).unwrap());
        let report = grad_check(&mut g, &bind(x, 3.0), 1e-4, 1e-6).unwrap();
        assert!(report.passed());
        assert!(report.max_rel_error() < 1e-6);
    }

    #[test]
    fn grad_check_on_constant_graph() {
        let (mut g, x) = scalar_graph(|g, _| g.scalar(4.0));
        let report = grad_check(&mut g, &bind(x, 1.5), 1e-4, 1e-6).unwrap();
        assert!(report.passed());
        assert_eq!(report.entries[0].analytic, 0.0);
        assert_eq!(report.entries[0].numeric, 0.0);
    }

    #[test]
    fn grad_check_rejects_bad_step() {
        let (mut g, x) = scalar_graph(|g, x| g.tanh(x));
        assert!(grad_check(&mut g, &bind(x, 0.1), 0.0, 1e-6).is_err());
    }

    #[test]
    fn empty_sum_is_zero() {
        let mut g = Graph::new();
        let s = g.sum(&[]).unwrap();
        g.set_output(s).unwrap();
        assert_eq!(g.forward(&Bindings::new()).unwrap(), 0.0);
    }
}
