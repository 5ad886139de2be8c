use super::params::CellParams;
use crate::error::{Error, Result};
use crate::numgrad::Tensor;

pub(crate) fn affine(m: &Tensor, x: &[f64], bias: Option<&[f64]>, out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        let row = &m.data[r * m.cols..(r + 1) * m.cols];
        let mut acc: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
        if let Some(b) = bias {
            acc += b[r];
        }
        *o = acc;
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One cell update from an explicit input embedding:
/// `z = σ(U_h h + U_x e + c)`, `ĥ = tanh(W_h h + W_x e + b)`,
/// `h' = h + z ⊙ (ĥ − h)`.
pub fn step_embedded(params: &CellParams, h: &[f64], e: &[f64]) -> Vec<f64> {
    let n = params.hidden();
    let mut gate_h = vec![0.0; n];
    let mut gate_x = vec![0.0; n];
    let mut cand_h = vec![0.0; n];
    let mut cand_x = vec![0.0; n];
    affine(&params.u_h, h, None, &mut gate_h);
    affine(&params.u_x, e, Some(&params.c.data), &mut gate_x);
    affine(&params.w_h, h, None, &mut cand_h);
    affine(&params.w_x, e, Some(&params.b.data), &mut cand_x);
    (0..n)
        .map(|i| {
            let z = sigmoid(gate_h[i] + gate_x[i]);
            let cand = (cand_h[i] + cand_x[i]).tanh();
            h[i] + z * (cand - h[i])
        })
        .collect()
}

/// One cell update for token `token`.
pub fn step(params: &CellParams, h: &[f64], token: usize) -> Result<Vec<f64>> {
    if h.len() != params.hidden() {
        return Err(Error::DimensionMismatch {
            expected: params.hidden(),
            found: h.len(),
        });
    }
    let e = params.embedding(token)?;
    Ok(step_embedded(params, h, &e))
}

pub fn output_logits(params: &CellParams, h: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; params.vocab()];
    affine(&params.w_o, h, Some(&params.b_o.data), &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ModelDims;
    use crate::rng;

    #[test]
    fn zero_params_halve_the_state() {
        let p = CellParams::zeros(ModelDims::new(2, 3, 4));
        assert_eq!(step(&p, &[1.0, -1.0], 0).unwrap(), vec![0.5, -0.5]);
        assert_eq!(step(&p, &[0.0, 0.0], 3).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn out_of_vocab_token_rejected() {
        let p = CellParams::zeros(ModelDims::new(2, 3, 4));
        assert!(matches!(
            step(&p, &[0.0, 0.0], 4),
            Err(Error::TokenOutOfVocabulary { .. })
        ));
    }

    #[test]
    fn output_is_finite_for_large_weights() {
        let mut p = CellParams::init_uniform(ModelDims::new(5, 3, 4), 50.0, &mut rng::stream(3, "t"));
        p.b.data[0] = 1e6;
        let h = step(&p, &[1e3, -1e3, 2.0, 0.0, 7.0], 1).unwrap();
        assert!(h.iter().all(|v| v.is_finite()));
    }
}
