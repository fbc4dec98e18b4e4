use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Default cap on `K^{d_x n}` grid points.
pub const GRID_CAP: usize = 1 << 20;

/// The grid `{1/K, …, 1}^{d_x×n}` in lexicographic order: the entry `(0, 0)`
/// varies slowest and entries are visited row-major.
#[derive(Debug, Clone)]
pub struct Grid {
    pub k: usize,
    pub d_x: usize,
    pub n: usize,
    pub points: Vec<Matrix>,
}

impl Grid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub(crate) fn checked_pow(base: usize, exp: usize, cap: usize, what: &str) -> Result<usize> {
    let mut acc: usize = 1;
    for _ in 0..exp {
        acc = acc
            .checked_mul(base)
            .filter(|&v| v <= cap)
            .ok_or_else(|| Error::Resource(format!("{what}: {base}^{exp} exceeds cap {cap}")))?;
    }
    Ok(acc)
}

/// Grid point with lexicographic index `index`.
pub fn grid_point(index: usize, k: usize, d_x: usize, n: usize) -> Matrix {
    let mut m = Matrix::zeros((d_x, n));
    let mut rest = index;
    for e in (0..d_x * n).rev() {
        m[[e / n, e % n]] = (rest % k + 1) as f64 / k as f64;
        rest /= k;
    }
    m
}

pub fn grid_points(k: usize, d_x: usize, n: usize) -> Result<Grid> {
    grid_points_capped(k, d_x, n, GRID_CAP)
}

pub fn grid_points_capped(k: usize, d_x: usize, n: usize, cap: usize) -> Result<Grid> {
    if k == 0 {
        return Err(Error::InvalidParam("grid granularity K must be >= 1".into()));
    }
    let count = checked_pow(k, d_x * n, cap, "grid size")?;
    let points = (0..count).map(|i| grid_point(i, k, d_x, n)).collect();
    Ok(Grid { k, d_x, n, points })
}

/// Cell index `1..=K` of a scalar: `(t−1)/K < x ≤ t/K`, with `[0, 1/K]` first.
pub(crate) fn cell_index(x: f64, k: usize) -> usize {
    ((x * k as f64).ceil() as usize).clamp(1, k)
}

/// Grid point `G` whose cell contains `X`.
pub fn cell_of(x: &Matrix, k: usize) -> Result<Matrix> {
    if k == 0 {
        return Err(Error::InvalidParam("grid granularity K must be >= 1".into()));
    }
    if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidParam("cell_of: input outside the unit cube".into()));
    }
    Ok(x.mapv(|v| cell_index(v, k) as f64 / k as f64))
}

fn check_delta(k: usize, delta: f64) -> Result<()> {
    if k == 0 || !(delta > 0.0 && delta < 1.0 / k as f64) {
        return Err(Error::InvalidParam(format!("trifling width must satisfy 0 < δ < 1/K, got δ={delta}, K={k}")));
    }
    Ok(())
}

pub(crate) fn scalar_in_trifling(x: f64, k: usize, delta: f64) -> bool {
    let kf = k as f64;
    let t = (x * kf).floor();
    t >= 1.0 && t <= kf - 1.0 && x > t / kf && x < t / kf + delta
}

/// Whether some entry lies in `∪_{t=1}^{K−1} (t/K, t/K + δ)`.
pub fn trifling_contains(x: &Matrix, k: usize, delta: f64) -> Result<bool> {
    check_delta(k, delta)?;
    Ok(x.iter().any(|&v| scalar_in_trifling(v, k, delta)))
}

/// Union bound `d_x·n·K·δ` on the measure of the trifling region.
pub fn trifling_measure_bound(k: usize, delta: f64, d_x: usize, n: usize) -> Result<f64> {
    check_delta(k, delta)?;
    Ok((d_x * n) as f64 * k as f64 * delta)
}

/// Exact measure `1 − (1 − (K−1)δ)^{d_x n}`.
pub fn trifling_measure(k: usize, delta: f64, d_x: usize, n: usize) -> Result<f64> {
    check_delta(k, delta)?;
    Ok(1.0 - (1.0 - (k as f64 - 1.0) * delta).powi((d_x * n) as i32))
}
