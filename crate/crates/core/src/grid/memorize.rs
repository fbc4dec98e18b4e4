//! Exact memorization of finitely many tokens by one feed-forward layer, and
//! the contextual code built from it.
//!
//! Every stored token `x_i` gets a hat `σ(t+1) − 2σ(t) + σ(t−1)` in the
//! projected coordinate `t = R vᵀ(x − x_i)`. With `R = 4/gap` the supports are
//! disjoint, so at most one hat is active anywhere. Each written row carries
//! the midrange `m` of its stored values as bias and the hats add `y_i − m`,
//! so every output is a convex combination of `m` and one `y_i`: bounded by
//! `max_i |y_i|`, and exact everywhere when all stored values agree.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::{AttentionHead, FeedForwardLayer, Matrix, SelfAttentionLayer, Vector};

const COLLISION_TOL: f64 = 1e-9;
const RANDOM_DIRECTIONS: u64 = 16;
/// Largest `range/gap` ratio of the projected tokens; beyond it rounding in
/// the hat inputs reaches about `1e-4` of the stored values.
const MAX_CONDITION: f64 = 1e11;

/// Where a memorization layer reads and writes inside a token.
pub(crate) struct MemoryRows {
    pub dim: usize,
    pub key_rows: Vec<usize>,
    pub write_rows: Vec<usize>,
    /// Rows whose current value is removed before the write.
    pub cancel_rows: Vec<usize>,
}

fn projections(keys: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    keys.iter().map(|x| x.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

/// Smallest gap between sorted projections.
fn min_gap(proj: &[f64]) -> f64 {
    let mut sorted = proj.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

/// Base-`M` direction `(1, M, M², …)` normalized, with `M` large enough for the
/// per-coordinate spread and resolution of the keys.
fn lattice_direction(keys: &[Vec<f64>]) -> Vec<f64> {
    let m = keys[0].len();
    let mut base: f64 = 1.0;
    for c in 0..m {
        let mut col: Vec<f64> = keys.iter().map(|x| x[c]).collect();
        col.sort_by(f64::total_cmp);
        let spread = col[col.len() - 1] - col[0];
        let step = col.windows(2).map(|w| w[1] - w[0]).filter(|&d| d > COLLISION_TOL).fold(f64::INFINITY, f64::min);
        if step.is_finite() {
            base = base.max(1.0 + spread / step);
        }
    }
    let v: Vec<f64> = (0..m).map(|c| base.powi(c as i32)).collect();
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    v.into_iter().map(|a| a / norm).collect()
}

/// A direction whose projection separates the keys, tried in order: the
/// caller's hint, the base-`M` lattice direction, then seeded Gaussians.
fn separating_direction(keys: &[Vec<f64>], hint: Option<Vec<f64>>, seed: u64) -> Result<(Vec<f64>, f64)> {
    let m = keys[0].len();
    let accept = |v: Vec<f64>| {
        let proj = projections(keys, &v);
        let gap = min_gap(&proj);
        let range = proj.iter().fold(0.0f64, |a, p| a.max(p.abs()));
        (gap > COLLISION_TOL && range / gap <= MAX_CONDITION).then_some((v, gap))
    };
    if keys.len() == 1 {
        return Ok((vec![0.0; m], f64::INFINITY));
    }
    if let Some(found) = hint.and_then(accept) {
        return Ok(found);
    }
    if let Some(found) = accept(lattice_direction(keys)) {
        return Ok(found);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..RANDOM_DIRECTIONS {
        let v: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if let Some(found) = accept(v.into_iter().map(|a| a / norm).collect()) {
            return Ok(found);
        }
    }
    Err(Error::Separation(RANDOM_DIRECTIONS as usize))
}

/// Feed-forward layer adding `y_i` to `write_rows` whenever the key rows equal
/// `x_i`, after clearing `cancel_rows`. Width `3r + 2·|cancel_rows|`.
pub(crate) fn memorize(
    rows: &MemoryRows,
    keys: &[Vec<f64>],
    values: &[Vec<f64>],
    hint: Option<Vec<f64>>,
    seed: u64,
) -> Result<FeedForwardLayer> {
    let r = keys.len();
    if r == 0 || values.len() != r {
        return Err(Error::Shape("memorization needs one value per key and at least one key".into()));
    }
    let (m, k) = (rows.key_rows.len(), rows.write_rows.len());
    if keys.iter().any(|x| x.len() != m) || values.iter().any(|y| y.len() != k) {
        return Err(Error::Shape("key or value length does not match its rows".into()));
    }
    let all = rows.key_rows.iter().chain(&rows.write_rows).chain(&rows.cancel_rows);
    if let Some(&row) = all.clone().find(|&&row| row >= rows.dim) {
        return Err(Error::Shape(format!("row {row} outside token dim {}", rows.dim)));
    }
    if keys.iter().chain(values).flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("memorized pairs".into()));
    }
    let mut sorted: Vec<&Vec<f64>> = keys.iter().collect();
    sorted.sort_by(|a, b| a.iter().zip(b.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::DuplicateTokens);
    }

    let (v, gap) = separating_direction(keys, hint, seed)?;
    let slope = if gap.is_finite() { 4.0 / gap } else { 1.0 };
    let width = 3 * r + 2 * rows.cancel_rows.len();
    let mut w1 = Matrix::zeros((width, rows.dim));
    let mut b1 = Vector::zeros(width);
    let mut w2 = Matrix::zeros((rows.dim, width));
    let mut b2 = Vector::zeros(rows.dim);
    let mut baseline = vec![0.0; k];
    for (o, &row) in rows.write_rows.iter().enumerate() {
        let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| (lo.min(y[o]), hi.max(y[o])));
        baseline[o] = 0.5 * (lo + hi);
        b2[row] += baseline[o];
    }
    for (i, (x, y)) in keys.iter().zip(values).enumerate() {
        let center = slope * x.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
        for (s, (shift, weight)) in [(1.0, 1.0), (0.0, -2.0), (-1.0, 1.0)].into_iter().enumerate() {
            let unit = 3 * i + s;
            for (c, &row) in rows.key_rows.iter().enumerate() {
                w1[[unit, row]] = slope * v[c];
            }
            b1[unit] = shift - center;
            for (o, &row) in rows.write_rows.iter().enumerate() {
                w2[[row, unit]] = weight * (y[o] - baseline[o]);
            }
        }
    }
    for (c, &row) in rows.cancel_rows.iter().enumerate() {
        let unit = 3 * r + 2 * c;
        w1[[unit, row]] = 1.0;
        w2[[row, unit]] = -1.0;
        w1[[unit + 1, row]] = -1.0;
        w2[[row, unit + 1]] = 1.0;
    }
    FeedForwardLayer::new(w1, b1, w2, b2)
}

/// Memorization on `d`-dimensional tokens: each `x_i` maps to `y_i` (which may
/// be shorter than `d`, padded with zeros), replacing the token.
pub fn build_readout_layer(pairs: &[(Vec<f64>, Vec<f64>)], seed: u64) -> Result<FeedForwardLayer> {
    let d = pairs.first().map(|(x, _)| x.len()).ok_or_else(|| Error::Shape("no pairs".into()))?;
    let k = pairs[0].1.len();
    if k > d {
        return Err(Error::Shape("outputs longer than tokens".into()));
    }
    let rows = MemoryRows { dim: d, key_rows: (0..d).collect(), write_rows: (0..k).collect(), cancel_rows: (0..d).collect() };
    let (keys, values): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
    memorize(&rows, &keys, &values, None, seed)
}

/// Lexicographic index of a grid column with entries in `{1/K, …, 1}`.
pub(crate) fn column_index(col: &[f64], k: usize) -> usize {
    col.iter().fold(0, |acc, &v| acc * k + ((v * k as f64).round() as usize).clamp(1, k) - 1)
}

/// Base of the per-position digits of the contextual code.
pub(crate) fn code_base(k: usize, d_x: usize, n: usize) -> Result<f64> {
    let per_column = crate::grid::checked_pow(k, d_x, super::GRID_CAP, "grid column count")?;
    let base = (n * per_column) as f64;
    if (n as f64) * base.powi(n as i32) > 2f64.powi(53) {
        return Err(Error::Resource(format!("contextual code base {base}^{n} exceeds exact float range")));
    }
    Ok(base)
}

/// Writes `enc(G_{:,j})·B^{j−1}` into `code_row` for tokens `G_{:,j} + 2(j−1)`
/// held in rows `[0, d_x)`, with `B = n K^{d_x}`.
pub(crate) fn token_code_layer_in(k: usize, d_x: usize, n: usize, dim: usize, code_row: usize) -> Result<FeedForwardLayer> {
    let base = code_base(k, d_x, n)?;
    let per_column = k.pow(d_x as u32);
    let mut keys = Vec::with_capacity(n * per_column);
    let mut values = Vec::with_capacity(n * per_column);
    for j in 0..n {
        for e in 0..per_column {
            let g = crate::grid::grid_point(e, k, d_x, 1);
            keys.push(g.iter().map(|v| v + 2.0 * j as f64).collect());
            values.push(vec![e as f64 * base.powi(j as i32)]);
        }
    }
    let rows = MemoryRows { dim, key_rows: (0..d_x).collect(), write_rows: vec![code_row], cancel_rows: vec![] };
    memorize(&rows, &keys, &values, None, 0)
}

/// Token-code layer on `(d_x + 1)`-row tokens; the code lands in row `d_x`.
pub fn build_token_code_layer(k: usize, d_x: usize, n: usize) -> Result<FeedForwardLayer> {
    token_code_layer_in(k, d_x, n, d_x + 1, d_x)
}

/// One head with zero scores writing the column mean of `code_row` to `out_row`.
pub fn build_average_attention(dim: usize, code_row: usize, out_row: usize) -> Result<SelfAttentionLayer> {
    if code_row >= dim || out_row >= dim {
        return Err(Error::Shape(format!("rows ({code_row}, {out_row}) outside token dim {dim}")));
    }
    let mut w_v = Matrix::zeros((1, dim));
    w_v[[0, code_row]] = 1.0;
    let mut w_o = Matrix::zeros((dim, 1));
    w_o[[out_row, 0]] = 1.0;
    SelfAttentionLayer::new(vec![AttentionHead::averaging(w_v, w_o)?])
}
