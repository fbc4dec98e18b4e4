//! The staircase network rounding each entry of `X + P` up to its grid node.

use crate::error::{Error, Result};
use crate::nn::{place_fnns, FeedForwardLayer, Fnn, Matrix, Placement, Vector};

fn check_delta(k: usize, delta: f64) -> Result<()> {
    if k == 0 || !(delta > 0.0 && delta < 1.0 / k as f64) {
        return Err(Error::InvalidParam(format!("step width must satisfy 0 < δ < 1/K, got δ={delta}, K={k}")));
    }
    Ok(())
}

/// One-hidden-layer network `R → R` with `f(z + 2(j−1)) = step_K(z) + 2(j−1)`
/// off the strips `(t/K, t/K + δ)`.
///
/// Inside column `j` each interior node `t/K` carries a ramp
/// `σ((z − c)/δ) − σ((z − c)/δ − 1)` of height `1/K`. Between columns a bridge of
/// height `1 + 1/K` climbs over `[2j − 1 + a, 2j − a]` with `a = min(δ, 1/3)`, so
/// values pushed up to `δ` outside `[2(j−1), 2j−1]` still read as the first or
/// last cell of their column.
pub fn build_step_fnn(k: usize, delta: f64, n: usize) -> Result<Fnn> {
    check_delta(k, delta)?;
    if n == 0 {
        return Err(Error::InvalidParam("sequence length must be >= 1".into()));
    }
    let kf = k as f64;
    let mut slopes = Vec::new();
    let mut biases = Vec::new();
    let mut out = Vec::new();
    let mut ramp = |slope: f64, start: f64, end: f64, height: f64| {
        slopes.extend([slope, slope]);
        biases.extend([-slope * start, -slope * end]);
        out.extend([height, -height]);
    };
    let a = delta.min(1.0 / 3.0);
    for j in 0..n {
        let base = 2.0 * j as f64;
        for t in 1..k {
            let c = base + t as f64 / kf;
            ramp(1.0 / delta, c, c + delta, 1.0 / kf);
        }
        if j + 1 < n {
            let (lo, hi) = (base + 1.0 + a, base + 2.0 - a);
            ramp(1.0 / (hi - lo), lo, hi, 1.0 + 1.0 / kf);
        }
    }
    if slopes.is_empty() {
        // K = 1 and n = 1: the constant 1, kept at width one.
        slopes.push(0.0);
        biases.push(0.0);
        out.push(0.0);
    }
    let width = slopes.len();
    let w0 = Matrix::from_shape_vec((width, 1), slopes).expect("width entries");
    let w1 = Matrix::from_shape_vec((1, width), out).expect("width entries");
    Fnn::new(vec![(w0, Vector::from(biases)), (w1, Vector::from(vec![1.0 / kf]))])
}

/// `P` with column `j` equal to `2(j−1)`.
pub fn positional_encoding(d_x: usize, n: usize) -> Matrix {
    Matrix::from_shape_fn((d_x, n), |(_, j)| 2.0 * j as f64)
}

/// Applies the step network to each of the first `d_x` rows of a `dim`-row token.
pub(crate) fn discretization_layer_in(k: usize, delta: f64, d_x: usize, n: usize, dim: usize) -> Result<FeedForwardLayer> {
    let step = build_step_fnn(k, delta, n)?;
    let jobs: Vec<Placement<'_>> = (0..d_x)
        .map(|p| Placement { fnn: &step, input_rows: vec![p], output_rows: vec![p], scratch_rows: vec![] })
        .collect();
    Ok(place_fnns(dim, &jobs)?.remove(0))
}

/// Entrywise step layer on `d_x`-row tokens; width `d_x(2nK)` at most.
pub fn build_discretization_layer(k: usize, delta: f64, d_x: usize, n: usize) -> Result<FeedForwardLayer> {
    discretization_layer_in(k, delta, d_x, n, d_x)
}
