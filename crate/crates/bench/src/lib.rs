//! Fixtures shared by the criterion benches.

use ndarray::Array2;

/// Deterministic input matrix with entries spread over `[0, 1]`.
pub fn sample_input(d_x: usize, n: usize, salt: u64) -> Array2<f64> {
    Array2::from_shape_fn((d_x, n), |(i, j)| {
        let k = (i * n + j) as u64 + 1;
        ((k.wrapping_mul(2654435761).wrapping_add(salt) % 1000) as f64 + 0.5) / 1000.0
    })
}
