//! ReLU networks computing the truncated Cantor map digit by digit.
//!
//! A clamp layer maps the input into `[0,1]`; stage `j` then extracts the
//! digit `a = σ((r − 1/2 + m)/m) − σ((r − 1/2)/m)` of the residual `r`, passes
//! `σ(r)` and the running sum on, and the next stage forms `2r − a` and
//! `acc + 2a·3^{−(1+d(j−1))}` linearly. On the set where no residual falls in
//! `(1/2 − m, 1/2)` every extracted digit is exact.

use super::cantor::OmegaK;
use crate::error::Result;
use crate::nn::{Fnn, Matrix, Vector};

/// One digit extractor inside a bank: it reads input `input`, shifted by
/// `−shift`, and adds its result times `weights[o]` to output `o`.
pub(crate) struct PhiCopy {
    pub input: usize,
    pub shift: f64,
    pub weights: Vec<f64>,
}

/// Parallel digit extractors sharing `K`, `d` and `margin`; depth `K + 1`,
/// width `4` per copy.
pub(crate) fn phi_bank(k: usize, d: usize, margin: f64, inputs: usize, outputs: usize, copies: &[PhiCopy]) -> Result<Fnn> {
    OmegaK::new(k, margin)?;
    let c = copies.len();
    let digit_weight = |j: usize| 2.0 * 3f64.powi(-((1 + d * j) as i32));
    let mut layers = Vec::with_capacity(k + 2);

    let mut w = Matrix::zeros((2 * c, inputs));
    let mut b = Vector::zeros(2 * c);
    for (i, cp) in copies.iter().enumerate() {
        w[[2 * i, cp.input]] = 1.0;
        w[[2 * i + 1, cp.input]] = 1.0;
        b[2 * i] = -cp.shift;
        b[2 * i + 1] = -cp.shift - 1.0;
    }
    layers.push((w, b));

    for stage in 0..k {
        let prev = if stage == 0 { 2 * c } else { 4 * c };
        let mut w = Matrix::zeros((4 * c, prev));
        let mut b = Vector::zeros(4 * c);
        for i in 0..c {
            // Residual r and running sum as combinations of the previous units.
            let (r, acc): (Vec<(usize, f64)>, Vec<(usize, f64)>) = if stage == 0 {
                (vec![(2 * i, 1.0), (2 * i + 1, -1.0)], vec![])
            } else {
                let g = 4 * i;
                let dw = digit_weight(stage - 1);
                (vec![(g + 2, 2.0), (g, -1.0), (g + 1, 1.0)], vec![(g + 3, 1.0), (g, dw), (g + 1, -dw)])
            };
            let u = 4 * i;
            for &(src, coef) in &r {
                w[[u, src]] += coef / margin;
                w[[u + 1, src]] += coef / margin;
                w[[u + 2, src]] += coef;
            }
            b[u] = -(0.5 - margin) / margin;
            b[u + 1] = -0.5 / margin;
            for &(src, coef) in &acc {
                w[[u + 3, src]] += coef;
            }
        }
        layers.push((w, b));
    }

    let dw = digit_weight(k - 1);
    let mut w = Matrix::zeros((outputs, 4 * c));
    for (i, cp) in copies.iter().enumerate() {
        let g = 4 * i;
        for (o, &weight) in cp.weights.iter().enumerate() {
            w[[o, g + 3]] += weight;
            w[[o, g]] += weight * dw;
            w[[o, g + 1]] -= weight * dw;
        }
    }
    layers.push((w, Vector::zeros(outputs)));
    Fnn::new(layers)
}

/// `φ̃_K`: equals the truncated Cantor map on `Ω_K`, is `0` below `0` and
/// `φ_K(1)` above `1`. Width 4, depth `K + 1`.
pub fn build_phi_tilde_fnn(k: usize, d: usize, margin: f64) -> Result<Fnn> {
    phi_bank(k, d, margin, 1, 1, &[PhiCopy { input: 0, shift: 0.0, weights: vec![1.0] }])
}
