//! Parameter, operation and exponential counts for a Transformer class, and the
//! VC-dimension and covering bounds they feed.
//!
//! Operation counts follow the reference evaluator exactly: a dot product of
//! length `k` costs `2k − 1` flops, and each softmax column costs a running
//! max, a subtraction, an exponential, a sum and a division per entry.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::{param_count, ArchSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OpCounts {
    /// Parameters.
    pub d: u64,
    /// Arithmetic operations, comparisons and exponentials of one forward pass.
    pub t: u64,
    /// Exponential evaluations.
    pub q: u64,
}

/// Asymptotic forms of the three counts, with all constants set to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Envelope {
    pub d: f64,
    pub t: f64,
    pub q: f64,
}

fn head_ops(d: u64, s: u64, n: u64) -> u64 {
    let projections = 3 * s * n * (2 * d - 1);
    let scores = n * n * (2 * s - 1);
    // max, subtract, exp, sum (n − 1 adds), divide: per column.
    let softmax = n * (5 * n - 1);
    let mix = s * n * (2 * n - 1);
    let out = d * n * (2 * s - 1);
    let accumulate = d * n;
    projections + scores + softmax + mix + out + accumulate
}

pub fn op_counts(spec: &ArchSpec) -> OpCounts {
    let [d_x, d_y, n, d, h, s, w, l] = [
        spec.d_x, spec.d_y, spec.n, spec.dim, spec.heads, spec.head_size, spec.width, spec.depth,
    ]
    .map(|v| v as u64);
    let embedding = d * n * (2 * d_x - 1) + d * n;
    let attention = h * head_ops(d, s, n);
    // W1 Z, +b1, relu, W2 (·), +b2, residual.
    let feed_forward = w * n * (2 * d - 1) + 2 * w * n + d * n * (2 * w - 1) + 2 * d * n;
    let projection = d_y * n * (2 * d - 1);
    OpCounts {
        d: param_count(spec),
        t: embedding + l * (attention + feed_forward) + projection,
        q: l * h * n * n,
    }
}

/// `d ~ (HS + W)DL`, `t ~ L(HDSn + HSn² + WDn)`, `q ~ LHn²`.
pub fn envelope(spec: &ArchSpec) -> Envelope {
    let [n, d, h, s, w, l] =
        [spec.n, spec.dim, spec.heads, spec.head_size, spec.width, spec.depth].map(|v| v as f64);
    Envelope {
        d: (h * s + w) * d * l,
        t: l * (h * d * s * n + h * s * n * n + w * d * n),
        q: l * h * n * n,
    }
}

/// VC-dimension bound for a class computed with `t` operations, `q` of them
/// exponentials, over `d` real parameters:
/// `(d(q+1))² + 11 d(q+1)(t + log₂(9 d(q+1)))`.
pub fn vc_bound(counts: &OpCounts) -> Result<f64> {
    if counts.d == 0 || counts.t == 0 {
        return Err(Error::InvalidParam("vc_bound needs d, t ≥ 1".into()));
    }
    let dq = counts.d as f64 * (counts.q as f64 + 1.0);
    Ok(dq * dq + 11.0 * dq * (counts.t as f64 + (9.0 * dq).log2()))
}

/// Covering-number style bound `vc · ln(e·m·B/δ)` for outputs truncated at `B`.
pub fn covering_bound(spec: &ArchSpec, delta: f64, m: u64, b: f64) -> Result<f64> {
    if !(delta > 0.0 && delta.is_finite()) || m == 0 || !(b > 0.0 && b.is_finite()) {
        return Err(Error::InvalidParam(format!(
            "covering_bound needs δ > 0, m ≥ 1, B > 0 (got δ={delta}, m={m}, B={b})"
        )));
    }
    let log = (std::f64::consts::E * m as f64 * b / delta).ln();
    Ok(vc_bound(&op_counts(spec))? * log)
}

/// `(HS + W)² D² H² L⁴ · ln(mB/δ)`.
pub fn covering_envelope(spec: &ArchSpec, delta: f64, m: u64, b: f64) -> f64 {
    let [d, h, s, w, l] = [spec.dim, spec.heads, spec.head_size, spec.width, spec.depth].map(|v| v as f64);
    (h * s + w).powi(2) * d * d * h * h * l.powi(4) * (m as f64 * b / delta).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(d_x: usize, d_y: usize, n: usize, dim: usize, h: usize, s: usize, w: usize, l: usize) -> ArchSpec {
        ArchSpec::new(d_x, d_y, n, dim, h, s, w, l).unwrap()
    }

    #[test]
    fn exponential_count() {
        assert_eq!(op_counts(&spec(1, 1, 2, 1, 1, 1, 1, 2)).q, 8);
    }

    #[test]
    fn parameter_count_matches() {
        let s = spec(2, 3, 4, 5, 2, 3, 7, 3);
        assert_eq!(op_counts(&s).d, param_count(&s));
    }

    #[test]
    fn smallest_network_by_hand() {
        // d_x = d_y = n = D = H = S = W = L = 1.
        // embedding 1+1, head 3+1+4+1+1+1, ff 1+2+1+2, projection 1.
        assert_eq!(op_counts(&spec(1, 1, 1, 1, 1, 1, 1, 1)).t, 2 + 11 + 6 + 1);
    }

    #[test]
    fn vc_hand_values() {
        let v = vc_bound(&OpCounts { d: 10, t: 100, q: 2 }).unwrap();
        assert!((v - (900.0 + 330.0 * (100.0 + 270f64.log2()))).abs() < 1e-9);
        assert!((v - 36565.35).abs() < 0.01);
        let v = vc_bound(&OpCounts { d: 1, t: 1, q: 0 }).unwrap();
        assert!((v - (1.0 + 11.0 * (1.0 + 9f64.log2()))).abs() < 1e-12);
        assert!((v - 46.87).abs() < 0.01);
        assert!(vc_bound(&OpCounts { d: 0, t: 1, q: 0 }).is_err());
    }

    #[test]
    fn covering_log_factor() {
        let s = spec(1, 1, 2, 2, 1, 1, 3, 1);
        let vc = vc_bound(&op_counts(&s)).unwrap();
        let delta = 0.3;
        let c = covering_bound(&s, delta, 1, std::f64::consts::E * delta).unwrap();
        assert!((c / vc - 2.0).abs() < 1e-12);
        assert!(covering_bound(&s, 10.0, 5, 1.0).unwrap() < covering_bound(&s, 0.1, 5, 1.0).unwrap());
        assert!(covering_bound(&s, 0.0, 5, 1.0).is_err());
    }

    #[test]
    fn quadratic_in_width() {
        for w in [1 << 10, 1 << 12, 1 << 14] {
            let a = spec(2, 1, 3, 4, 2, 2, w, 2);
            let b = spec(2, 1, 3, 4, 2, 2, 2 * w, 2);
            let r = vc_bound(&op_counts(&b)).unwrap() / vc_bound(&op_counts(&a)).unwrap();
            assert!((3.5..=4.0).contains(&r), "W={w}: ratio {r}");
        }
    }

    #[test]
    fn exact_counts_sit_under_a_constant_times_envelope() {
        let s = spec(2, 2, 6, 8, 2, 4, 16, 3);
        let (c, e) = (op_counts(&s), envelope(&s));
        assert!(c.t as f64 <= 12.0 * e.t + 100.0);
        assert_eq!(c.q as f64, e.q);
        assert!(covering_envelope(&s, 0.1, 100, 1.0) > 0.0);
    }

    #[test]
    fn one_block_by_hand() {
        // D=4, S=2, n=3, H=2, W=5: heads 2·273, ff 267, embedding 48, projection 21.
        let a = op_counts(&spec(2, 1, 3, 4, 2, 2, 5, 1));
        assert_eq!(a.t, 48 + 546 + 267 + 21);
        let b = op_counts(&spec(2, 1, 3, 4, 2, 2, 5, 3));
        assert_eq!(b.t - a.t, 2 * (546 + 267));
    }

    proptest! {
        #[test]
        fn monotone_in_every_field(
            base in prop::array::uniform8(1usize..5),
            field in 0usize..8,
        ) {
            let mut v = base;
            v[3] = v[3].max(v[5]);
            let a = ArchSpec::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7]).unwrap();
            let mut u = v;
            u[field] += 1;
            if field == 5 { u[3] = u[3].max(u[5]); }
            let b = ArchSpec::new(u[0], u[1], u[2], u[3], u[4], u[5], u[6], u[7]).unwrap();
            let (ca, cb) = (op_counts(&a), op_counts(&b));
            prop_assert!(cb.t > ca.t);
            prop_assert!(cb.q >= ca.q && cb.d > ca.d);
            prop_assert!(ca.q <= ca.t);
            prop_assert!(vc_bound(&cb).unwrap() > vc_bound(&ca).unwrap());
        }
    }
}
