use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numgrad::{Shape, Tensor};

/// Hidden size `n`, embedding size `d` and vocabulary size `v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub hidden: usize,
    pub embed: usize,
    pub vocab: usize,
}

impl ModelDims {
    pub fn new(hidden: usize, embed: usize, vocab: usize) -> Self {
        ModelDims {
            hidden,
            embed,
            vocab,
        }
    }

    /// `2n² + 2nd + 2n + vn + v + dv`
    pub fn param_count(&self) -> usize {
        let (n, d, v) = (self.hidden, self.embed, self.vocab);
        2 * n * n + 2 * n * d + 2 * n + v * n + v + d * v
    }
}

/// Weights of the gated recurrent cell, its output head and the token
/// embedding table. Matrices are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CellParams {
    /// candidate: `W_h` (n×n), `W_x` (n×d), `b` (n)
    pub w_h: Tensor,
    pub w_x: Tensor,
    pub b: Tensor,
    /// update gate: `U_h` (n×n), `U_x` (n×d), `c` (n)
    pub u_h: Tensor,
    pub u_x: Tensor,
    pub c: Tensor,
    /// output head: `W_o` (v×n), `b_o` (v)
    pub w_o: Tensor,
    pub b_o: Tensor,
    /// token embeddings, one column per token (d×v)
    pub embed: Tensor,
}

pub const PARAM_NAMES: [&str; 9] = ["w_h", "w_x", "b", "u_h", "u_x", "c", "w_o", "b_o", "embed"];

impl CellParams {
    pub fn shapes(dims: ModelDims) -> [Shape; 9] {
        let (n, d, v) = (dims.hidden, dims.embed, dims.vocab);
        [
            Shape::matrix(n, n),
            Shape::matrix(n, d),
            Shape::vector(n),
            Shape::matrix(n, n),
            Shape::matrix(n, d),
            Shape::vector(n),
            Shape::matrix(v, n),
            Shape::vector(v),
            Shape::matrix(d, v),
        ]
    }

    pub fn zeros(dims: ModelDims) -> Self {
        Self::from_fn(dims, |_| 0.0)
    }

    /// Every entry drawn independently from `U[-scale, scale]`.
    pub fn init_uniform<R: Rng + ?Sized>(dims: ModelDims, scale: f64, rng: &mut R) -> Self {
        Self::from_fn(dims, |_| rng.random_range(-scale..=scale))
    }

    fn from_fn(dims: ModelDims, mut f: impl FnMut(usize) -> f64) -> Self {
        let mut it = Self::shapes(dims).into_iter().enumerate().map(|(i, s)| Tensor {
            rows: s.rows,
            cols: s.cols,
            data: (0..s.len()).map(|_| f(i)).collect(),
        });
        let mut next = || it.next().expect("nine parameter tensors");
        CellParams {
            w_h: next(),
            w_x: next(),
            b: next(),
            u_h: next(),
            u_x: next(),
            c: next(),
            w_o: next(),
            b_o: next(),
            embed: next(),
        }
    }

    pub fn from_tensors(tensors: Vec<Tensor>) -> Result<Self> {
        let [w_h, w_x, b, u_h, u_x, c, w_o, b_o, embed]: [Tensor; 9] = tensors
            .try_into()
            .map_err(|v: Vec<Tensor>| Error::DimensionMismatch {
                expected: 9,
                found: v.len(),
            })?;
        let p = CellParams {
            w_h,
            w_x,
            b,
            u_h,
            u_x,
            c,
            w_o,
            b_o,
            embed,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            hidden: self.w_h.rows,
            embed: self.w_x.cols,
            vocab: self.w_o.rows,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_h.rows
    }

    pub fn vocab(&self) -> usize {
        self.w_o.rows
    }

    pub fn tensors(&self) -> [&Tensor; 9] {
        [
            &self.w_h, &self.w_x, &self.b, &self.u_h, &self.u_x, &self.c, &self.w_o, &self.b_o,
            &self.embed,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 9] {
        [
            &mut self.w_h,
            &mut self.w_x,
            &mut self.b,
            &mut self.u_h,
            &mut self.u_x,
            &mut self.c,
            &mut self.w_o,
            &mut self.b_o,
            &mut self.embed,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Checks shape consistency against the declared dims and finiteness.
    pub fn validate(&self) -> Result<()> {
        let dims = self.dims();
        for (t, (s, name)) in self
            .tensors()
            .iter()
            .zip(Self::shapes(dims).iter().zip(PARAM_NAMES))
        {
            if t.shape() != *s || t.data.len() != s.len() {
                return Err(Error::Document(format!(
                    "parameter {name} has shape {}, expected {s}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::Document(format!("parameter {name} is not finite")));
            }
        }
        Ok(())
    }

    /// Embedding column for `token`.
    pub fn embedding(&self, token: usize) -> Result<Vec<f64>> {
        let v = self.vocab();
        if token >= v {
            return Err(Error::TokenOutOfVocabulary { token, vocab: v });
        }
        let e = &self.embed;
        Ok((0..e.rows).map(|r| e.data[r * e.cols + token]).collect())
    }

    pub fn embed_tokens(&self, tokens: &[usize]) -> Result<Vec<Vec<f64>>> {
        tokens.iter().map(|&t| self.embedding(t)).collect()
    }
}
