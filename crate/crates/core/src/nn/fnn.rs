use ndarray::array;

use super::layers::{Matrix, Vector};
use crate::error::{Error, Result};

/// Plain ReLU network `N_{l+1} = relu(A_l N_l + b_l)`, affine output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Fnn {
    layers: Vec<(Matrix, Vector)>,
}

impl Fnn {
    pub fn new(layers: Vec<(Matrix, Vector)>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidParam("network needs at least one affine layer".into()));
        }
        for (i, (a, b)) in layers.iter().enumerate() {
            if a.nrows() != b.len() {
                return Err(Error::Shape(format!("layer {i}: A has {} rows, b has {}", a.nrows(), b.len())));
            }
            if i > 0 && a.ncols() != layers[i - 1].0.nrows() {
                return Err(Error::Shape(format!("layer {i}: input {} != previous output {}", a.ncols(), layers[i - 1].0.nrows())));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[(Matrix, Vector)] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].0.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].0.nrows()
    }

    /// Number of hidden layers.
    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    /// Hidden widths `W_1, …, W_depth`.
    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.depth()].iter().map(|(a, _)| a.nrows()).collect()
    }

    /// Largest hidden width.
    pub fn width(&self) -> usize {
        self.hidden_widths().into_iter().max().unwrap_or(0)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vector> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!("expected input of length {}, got {}", self.input_dim(), x.len())));
        }
        let mut h = Vector::from(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, (a, b)) in self.layers.iter().enumerate() {
            h = a.dot(&h) + b;
            if i < last {
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
        Ok(h)
    }
}

/// Middle value of three reals as `x1 + x2 + x3 − max − min`, depth 2, width 7.
///
/// Hidden layer 1 holds `relu(x1 − x2)` and `relu(±x_i)`; with
/// `max12 = x2 + relu(x1 − x2)` and `min12 = x1 − relu(x1 − x2)`, layer 2 holds
/// `relu(max12 − x3)`, `relu(x3 − min12)` and `relu(±(x1 + x2 − x3))`.
pub fn build_mid_fnn() -> Fnn {
    let a0 = array![
        [1.0, -1.0, 0.0],
        [1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, -1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0],
    ];
    let a1 = array![
        [1.0, 0.0, 0.0, 1.0, -1.0, -1.0, 1.0],
        [1.0, -1.0, 1.0, 0.0, 0.0, 1.0, -1.0],
        [0.0, 1.0, -1.0, 1.0, -1.0, -1.0, 1.0],
        [0.0, -1.0, 1.0, -1.0, 1.0, 1.0, -1.0],
    ];
    let a2 = array![[-1.0, 1.0, 1.0, -1.0]];
    Fnn::new(vec![(a0, Vector::zeros(7)), (a1, Vector::zeros(4)), (a2, Vector::zeros(1))])
        .expect("mid network shapes are consistent")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sorted_mid(x: [f64; 3]) -> f64 {
        let mut v = x;
        v.sort_by(f64::total_cmp);
        v[1]
    }

    #[test]
    fn identity_affine() {
        let fnn = Fnn::new(vec![(Matrix::eye(2), Vector::zeros(2))]).unwrap();
        assert_eq!(fnn.forward(&[1.0, -2.0]).unwrap().to_vec(), vec![1.0, -2.0]);
    }

    #[test]
    fn mid_examples() {
        let mid = build_mid_fnn();
        assert_eq!(mid.forward(&[1.0, 3.0, 2.0]).unwrap()[0], 2.0);
        assert_eq!(mid.forward(&[5.0, 5.0, 1.0]).unwrap()[0], 5.0);
        assert_eq!(mid.depth(), 2);
        assert!(mid.width() <= 14);
    }

    #[test]
    fn two_layer_matches_straight_line_arithmetic() {
        let a0 = array![[0.5, -1.0], [2.0, 0.25], [-0.75, 1.5]];
        let b0 = array![0.1, -0.2, 0.3];
        let a1 = array![[1.0, -2.0, 0.5]];
        let b1 = array![0.05];
        let fnn = Fnn::new(vec![(a0, b0), (a1, b1)]).unwrap();
        let (x, y) = (0.7, -0.4);
        let h = [
            (0.5 * x - 1.0 * y + 0.1_f64).max(0.0),
            (2.0 * x + 0.25 * y - 0.2_f64).max(0.0),
            (-0.75 * x + 1.5 * y + 0.3_f64).max(0.0),
        ];
        let expected = h[0] - 2.0 * h[1] + 0.5 * h[2] + 0.05;
        assert!((fnn.forward(&[x, y]).unwrap()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn inconsistent_shapes_rejected() {
        let bad = Fnn::new(vec![(Matrix::zeros((3, 2)), Vector::zeros(3)), (Matrix::zeros((1, 2)), Vector::zeros(1))]);
        assert!(matches!(bad, Err(Error::Shape(_))));
        let fnn = build_mid_fnn();
        assert!(fnn.forward(&[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn mid_matches_sort(a in -1e3..1e3f64, b in -1e3..1e3f64, c in -1e3..1e3f64) {
            let got = build_mid_fnn().forward(&[a, b, c]).unwrap()[0];
            prop_assert!((got - sorted_mid([a, b, c])).abs() <= 1e-9);
        }
    }
}
