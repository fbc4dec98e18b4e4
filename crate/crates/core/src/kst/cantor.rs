//! Binary digit interleaving into ternary Cantor codes.
//!
//! A matrix `X ∈ [0,1]^{d_x×n}` with first `K` binary digits `a_j(X_pq)` maps
//! to the ternary number whose digit at position `d(j−1) + q·d_x + p + 1` is
//! `2·a_j(X_pq)` (0-based `p`, `q`; `d = d_x n`). Terminating binary expansions
//! are used, and `x = 1` is read as all ones.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Cap on `2^{d_x n K}` interpolation points.
pub const CODE_CAP: usize = 1 << 20;

/// First `k` binary digits of `x ∈ [0,1]`.
pub fn binary_digits(x: f64, k: usize) -> Vec<u8> {
    if x >= 1.0 {
        return vec![1; k];
    }
    let mut r = x.max(0.0);
    (0..k)
        .map(|_| {
            r *= 2.0;
            if r >= 1.0 {
                r -= 1.0;
                1
            } else {
                0
            }
        })
        .collect()
}

/// `Σ_{j=1}^{K} 2 a_j 3^{−(1 + d(j−1))}`.
pub fn phi_truncated(x: f64, k: usize, d: usize) -> f64 {
    binary_digits(x, k)
        .iter()
        .enumerate()
        .map(|(j, &a)| 2.0 * a as f64 * 3f64.powi(-((1 + d * j) as i32)))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CantorCode {
    pub value: f64,
    pub k: usize,
    pub d_x: usize,
    pub n: usize,
    /// Ternary digits, each 0 or 2, most significant first.
    pub digits: Vec<u8>,
}

impl CantorCode {
    pub fn from_digits(digits: Vec<u8>, k: usize, d_x: usize, n: usize) -> Result<Self> {
        if digits.len() != d_x * n * k {
            return Err(Error::Shape(format!("expected {} ternary digits, got {}", d_x * n * k, digits.len())));
        }
        if let Some(d) = digits.iter().find(|&&d| d != 0 && d != 2) {
            return Err(Error::InvalidParam(format!("Cantor digits must be 0 or 2, found {d}")));
        }
        let value = digits_value(&digits);
        Ok(Self { value, k, d_x, n, digits })
    }

    /// Reads the digits back from a value of the depth-`d_x n K` Cantor approximation.
    pub fn from_value(value: f64, k: usize, d_x: usize, n: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::InvalidParam(format!("code value {value} outside [0,1]")));
        }
        let mut r = value;
        let mut digits = Vec::with_capacity(d_x * n * k);
        for _ in 0..d_x * n * k {
            r *= 3.0;
            if r >= 1.5 {
                digits.push(2);
                r = (r - 2.0).max(0.0);
            } else {
                digits.push(0);
                r = r.min(1.0);
            }
        }
        Self::from_digits(digits, k, d_x, n)
    }
}

fn digits_value(digits: &[u8]) -> f64 {
    digits.iter().rev().fold(0.0, |acc, &d| (acc + d as f64) / 3.0)
}

/// Interleaved ternary code of the first `k` binary digits of every entry.
pub fn cantor_encode(x: &Matrix, k: usize) -> CantorCode {
    let (d_x, n) = x.dim();
    let d = d_x * n;
    let mut digits = vec![0u8; d * k];
    for q in 0..n {
        for p in 0..d_x {
            for (j, a) in binary_digits(x[[p, q]], k).into_iter().enumerate() {
                digits[d * j + q * d_x + p] = 2 * a;
            }
        }
    }
    let value = digits_value(&digits);
    CantorCode { value, k, d_x, n, digits }
}

/// Dyadic matrix `Σ_j a_j 2^{−j}` recovered from the interleaved digits.
pub fn cantor_decode(code: &CantorCode) -> Result<Matrix> {
    let (d_x, n, k) = (code.d_x, code.n, code.k);
    let d = d_x * n;
    if code.digits.len() != d * k {
        return Err(Error::Shape("digit count does not match d_x·n·K".into()));
    }
    let mut x = Matrix::zeros((d_x, n));
    for (pos, &digit) in code.digits.iter().enumerate() {
        let bit = match digit {
            0 => 0.0,
            2 => 1.0,
            other => return Err(Error::InvalidParam(format!("invalid Cantor digit {other}"))),
        };
        let (j, e) = (pos / d, pos % d);
        x[[e % d_x, e / d_x]] += bit * 0.5f64.powi(j as i32 + 1);
    }
    Ok(x)
}

/// `{Σ_j 2 t_j 3^{−j} : t ∈ {0,1}^{d_x n K}} ∪ {1}`, ascending.
pub fn interpolation_points(k: usize, d_x: usize, n: usize) -> Result<Vec<f64>> {
    let bits = d_x * n * k;
    if bits >= usize::BITS as usize || (1usize << bits) > CODE_CAP {
        return Err(Error::Resource(format!("2^{bits} interpolation points exceed cap {CODE_CAP}")));
    }
    let mut pts: Vec<f64> = (0..1usize << bits)
        .map(|t| (0..bits).map(|j| if t >> (bits - 1 - j) & 1 == 1 { 2.0 * 3f64.powi(-(j as i32 + 1)) } else { 0.0 }).sum())
        .collect();
    pts.push(1.0);
    Ok(pts)
}

/// Points of `[0,1]` whose doubled residuals `r_1 = x`, `r_{j+1} = 2 r_j − a_j`
/// avoid `(1/2 − margin, 1/2)` for the first `K` digits. The band sits just
/// below each threshold, so dyadic points (terminating expansions) belong to
/// the set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OmegaK {
    pub k: usize,
    pub margin: f64,
}

impl OmegaK {
    pub fn new(k: usize, margin: f64) -> Result<Self> {
        if k == 0 || !(margin > 0.0 && margin < 0.5f64.powi(k as i32 + 1)) {
            return Err(Error::InvalidParam(format!("margin must lie in (0, 2^-(K+1)), got {margin} for K={k}")));
        }
        Ok(Self { k, margin })
    }

    /// `2^{−K−4}`.
    pub fn default_margin(k: usize) -> f64 {
        0.5f64.powi(k as i32 + 4)
    }

    pub fn contains_scalar(&self, x: f64) -> bool {
        if !(0.0..=1.0).contains(&x) {
            return false;
        }
        let mut r = x;
        for _ in 0..self.k {
            if r > 0.5 - self.margin && r < 0.5 {
                return false;
            }
            let a = if r >= 0.5 { 1.0 } else { 0.0 };
            r = 2.0 * r - a;
        }
        true
    }

    pub fn contains(&self, x: &Matrix) -> bool {
        x.iter().all(|&v| self.contains_scalar(v))
    }

    /// Lower bound `1 − K·margin` on the per-coordinate measure: stage `j`
    /// removes `2^{j−1}` intervals of length `margin·2^{1−j}`.
    pub fn measure_lower_bound(&self) -> f64 {
        1.0 - self.k as f64 * self.margin
    }
}
