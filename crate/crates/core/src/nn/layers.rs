//! Layer types of the Transformer class and their forward maps.
//!
//! Every layer keeps the residual connection: attention computes
//! `Z + Σ_h W_O (W_V Z) softmax((W_K Z)ᵀ (W_Q Z))` and a feed-forward layer
//! computes `Z + W2 relu(W1 Z + b1) + b2`.

use ndarray::{s, Array1, Array2, Axis, Zip};

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;
pub type Vector = Array1<f64>;

pub(crate) fn relu_inplace(m: &mut Matrix) {
    m.mapv_inplace(|v| v.max(0.0));
}

pub(crate) fn all_finite(m: &Matrix) -> bool {
    m.iter().all(|v| v.is_finite())
}

fn expect_shape(m: &Matrix, rows: usize, cols: usize, what: &str) -> Result<()> {
    if m.dim() != (rows, cols) {
        return Err(Error::Shape(format!(
            "{what}: expected {rows}x{cols}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// `E_in X + P`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingLayer {
    pub e_in: Matrix,
    pub p: Matrix,
}

impl EmbeddingLayer {
    pub fn new(e_in: Matrix, p: Matrix) -> Result<Self> {
        if e_in.nrows() != p.nrows() {
            return Err(Error::Shape(format!(
                "embedding: E_in has {} rows but P has {}",
                e_in.nrows(),
                p.nrows()
            )));
        }
        Ok(Self { e_in, p })
    }

    /// Zero-padded identity on the first `d_x` rows and zero positional encoding.
    pub fn identity(dim: usize, d_x: usize, n: usize) -> Self {
        let mut e_in = Matrix::zeros((dim, d_x));
        for i in 0..d_x.min(dim) {
            e_in[[i, i]] = 1.0;
        }
        Self { e_in, p: Matrix::zeros((dim, n)) }
    }

    pub fn dim(&self) -> usize {
        self.e_in.nrows()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        expect_shape(x, self.e_in.ncols(), self.p.ncols(), "embedding input")?;
        Ok(self.e_in.dot(x) + &self.p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionLayer {
    pub e_out: Matrix,
}

impl ProjectionLayer {
    pub fn new(e_out: Matrix) -> Self {
        Self { e_out }
    }

    /// Reads the first `d_y` rows of a `dim`-row token.
    pub fn identity(d_y: usize, dim: usize) -> Self {
        let mut e_out = Matrix::zeros((d_y, dim));
        for i in 0..d_y.min(dim) {
            e_out[[i, i]] = 1.0;
        }
        Self { e_out }
    }

    pub fn forward(&self, z: &Matrix) -> Result<Matrix> {
        if z.nrows() != self.e_out.ncols() {
            return Err(Error::Shape(format!(
                "projection: expected {} rows, got {}",
                self.e_out.ncols(),
                z.nrows()
            )));
        }
        Ok(self.e_out.dot(z))
    }
}

/// One attention head. `uniform` is set when `W_K = W_Q = 0`; such heads
/// average columns with weight exactly `1/n` instead of evaluating `exp`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHead {
    pub w_v: Matrix,
    pub w_k: Matrix,
    pub w_q: Matrix,
    pub w_o: Matrix,
    uniform: bool,
}

impl AttentionHead {
    pub fn new(w_v: Matrix, w_k: Matrix, w_q: Matrix, w_o: Matrix) -> Result<Self> {
        let (s, d) = w_v.dim();
        expect_shape(&w_k, s, d, "W_K")?;
        expect_shape(&w_q, s, d, "W_Q")?;
        expect_shape(&w_o, d, s, "W_O")?;
        let uniform = w_k.iter().all(|&v| v == 0.0) && w_q.iter().all(|&v| v == 0.0);
        Ok(Self { w_v, w_k, w_q, w_o, uniform })
    }

    /// Head with zero scores: `W_O (W_V Z)` averaged over columns.
    pub fn averaging(w_v: Matrix, w_o: Matrix) -> Result<Self> {
        let (s, d) = w_v.dim();
        Self::new(w_v, Matrix::zeros((s, d)), Matrix::zeros((s, d)), w_o)
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    pub fn head_size(&self) -> usize {
        self.w_v.nrows()
    }

    pub fn dim(&self) -> usize {
        self.w_v.ncols()
    }

    /// Column-wise softmax attention matrix (n×n); column j holds the weights used by token j.
    pub fn attention_weights(&self, z: &Matrix) -> Matrix {
        let n = z.ncols();
        if self.uniform {
            return Matrix::from_elem((n, n), 1.0 / n as f64);
        }
        let k = self.w_k.dot(z);
        let q = self.w_q.dot(z);
        let mut scores = k.t().dot(&q);
        for mut col in scores.axis_iter_mut(Axis(1)) {
            let max = col.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            col.mapv_inplace(|v| (v - max).exp());
            let sum = col.sum();
            col.mapv_inplace(|v| v / sum);
        }
        scores
    }

    /// The head's contribution `W_O (W_V Z) A` without the residual term.
    pub fn contribution(&self, z: &Matrix) -> Matrix {
        let v = self.w_v.dot(z);
        let mixed = if self.uniform {
            let n = z.ncols() as f64;
            let mean = v.sum_axis(Axis(1)) / n;
            let mut out = Matrix::zeros(v.raw_dim());
            for mut col in out.axis_iter_mut(Axis(1)) {
                col.assign(&mean);
            }
            out
        } else {
            v.dot(&self.attention_weights(z))
        };
        self.w_o.dot(&mixed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttentionLayer {
    heads: Vec<AttentionHead>,
    dim: usize,
}

impl SelfAttentionLayer {
    pub fn new(heads: Vec<AttentionHead>) -> Result<Self> {
        let dim = heads
            .first()
            .map(AttentionHead::dim)
            .ok_or_else(|| Error::InvalidParam("attention layer needs at least one head".into()))?;
        if heads.iter().any(|h| h.dim() != dim) {
            return Err(Error::Shape("attention heads disagree on embedding dim".into()));
        }
        Ok(Self { heads, dim })
    }

    pub fn heads(&self) -> &[AttentionHead] {
        &self.heads
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn uniform_flags(&self) -> Vec<bool> {
        self.heads.iter().map(AttentionHead::is_uniform).collect()
    }

    pub fn max_head_size(&self) -> usize {
        self.heads.iter().map(AttentionHead::head_size).max().unwrap_or(0)
    }

    pub fn forward(&self, z: &Matrix) -> Result<Matrix> {
        if z.nrows() != self.dim {
            return Err(Error::Shape(format!(
                "attention: expected {} rows, got {}",
                self.dim,
                z.nrows()
            )));
        }
        if !all_finite(z) {
            return Err(Error::NonFinite("attention input".into()));
        }
        let mut out = z.clone();
        for head in &self.heads {
            out += &head.contribution(z);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardLayer {
    pub w1: Matrix,
    pub b1: Vector,
    pub w2: Matrix,
    pub b2: Vector,
}

impl FeedForwardLayer {
    pub fn new(w1: Matrix, b1: Vector, w2: Matrix, b2: Vector) -> Result<Self> {
        let (w, d) = w1.dim();
        if b1.len() != w || b2.len() != d {
            return Err(Error::Shape("feed-forward bias lengths".into()));
        }
        expect_shape(&w2, d, w, "W2")?;
        Ok(Self { w1, b1, w2, b2 })
    }

    /// `W2 = 0` with a single hidden unit.
    pub fn identity(dim: usize) -> Self {
        Self {
            w1: Matrix::zeros((1, dim)),
            b1: Vector::zeros(1),
            w2: Matrix::zeros((dim, 1)),
            b2: Vector::zeros(dim),
        }
    }

    pub fn width(&self) -> usize {
        self.w1.nrows()
    }

    pub fn dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn forward(&self, z: &Matrix) -> Result<Matrix> {
        if z.nrows() != self.dim() {
            return Err(Error::Shape(format!(
                "feed-forward: expected {} rows, got {}",
                self.dim(),
                z.nrows()
            )));
        }
        let mut h = self.w1.dot(z);
        Zip::from(h.rows_mut()).and(&self.b1).for_each(|mut row, &b| row += b);
        relu_inplace(&mut h);
        let mut out = z + &self.w2.dot(&h);
        Zip::from(out.rows_mut()).and(&self.b2).for_each(|mut row, &b| row += b);
        Ok(out)
    }
}

/// Feed-forward layer with one bias column per token position.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedFeedForwardLayer {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

impl GeneralizedFeedForwardLayer {
    pub fn new(w1: Matrix, b1: Matrix, w2: Matrix, b2: Matrix) -> Result<Self> {
        let (w, d) = w1.dim();
        let n = b1.ncols();
        expect_shape(&b1, w, n, "B1")?;
        expect_shape(&w2, d, w, "W2")?;
        expect_shape(&b2, d, n, "B2")?;
        Ok(Self { w1, b1, w2, b2 })
    }

    pub fn from_standard(layer: &FeedForwardLayer, n: usize) -> Self {
        let tile = |b: &Vector| {
            let mut m = Matrix::zeros((b.len(), n));
            for mut col in m.axis_iter_mut(Axis(1)) {
                col.assign(b);
            }
            m
        };
        Self {
            w1: layer.w1.clone(),
            b1: tile(&layer.b1),
            w2: layer.w2.clone(),
            b2: tile(&layer.b2),
        }
    }

    pub fn width(&self) -> usize {
        self.w1.nrows()
    }

    pub fn dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn seq_len(&self) -> usize {
        self.b1.ncols()
    }

    pub fn forward(&self, z: &Matrix) -> Result<Matrix> {
        expect_shape(z, self.dim(), self.seq_len(), "generalized feed-forward input")?;
        let mut h = self.w1.dot(z) + &self.b1;
        relu_inplace(&mut h);
        Ok(z + &self.w2.dot(&h) + &self.b2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeedForward {
    Standard(FeedForwardLayer),
    Generalized(GeneralizedFeedForwardLayer),
}

impl FeedForward {
    pub fn width(&self) -> usize {
        match self {
            Self::Standard(l) => l.width(),
            Self::Generalized(l) => l.width(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Standard(l) => l.dim(),
            Self::Generalized(l) => l.dim(),
        }
    }

    pub fn is_generalized(&self) -> bool {
        matches!(self, Self::Generalized(_))
    }

    pub fn forward(&self, z: &Matrix) -> Result<Matrix> {
        match self {
            Self::Standard(l) => l.forward(z),
            Self::Generalized(l) => l.forward(z),
        }
    }

    pub fn to_generalized(&self, n: usize) -> GeneralizedFeedForwardLayer {
        match self {
            Self::Standard(l) => GeneralizedFeedForwardLayer::from_standard(l, n),
            Self::Generalized(l) => l.clone(),
        }
    }

    /// Parameter tensors in a fixed order: W1, b1, W2, b2.
    pub(crate) fn weight_count(&self) -> usize {
        match self {
            Self::Standard(l) => l.w1.len() + l.b1.len() + l.w2.len() + l.b2.len(),
            Self::Generalized(l) => l.w1.len() + l.b1.len() + l.w2.len() + l.b2.len(),
        }
    }
}

impl From<FeedForwardLayer> for FeedForward {
    fn from(l: FeedForwardLayer) -> Self {
        Self::Standard(l)
    }
}

impl From<GeneralizedFeedForwardLayer> for FeedForward {
    fn from(l: GeneralizedFeedForwardLayer) -> Self {
        Self::Generalized(l)
    }
}

/// Copies `src` into `dst` at the given offsets.
pub(crate) fn put_block(dst: &mut Matrix, row: usize, col: usize, src: &Matrix) {
    let (r, c) = src.dim();
    dst.slice_mut(s![row..row + r, col..col + c]).assign(src);
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_scores_give_exact_mean() {
        let head = AttentionHead::averaging(array![[1.0]], array![[1.0]]).unwrap();
        let layer = SelfAttentionLayer::new(vec![head]).unwrap();
        let out = layer.forward(&array![[0.0, 2.0]]).unwrap();
        assert_eq!(out, array![[1.0, 3.0]]);
    }

    #[test]
    fn zero_output_attention_is_identity() {
        let head = AttentionHead::new(
            array![[0.3, -1.0]],
            array![[2.0, 0.5]],
            array![[-0.7, 1.1]],
            array![[0.0], [0.0]],
        )
        .unwrap();
        let layer = SelfAttentionLayer::new(vec![head]).unwrap();
        let z = array![[1.0, -2.0, 0.5], [4.0, 0.0, 3.0]];
        assert_eq!(layer.forward(&z).unwrap(), z);
    }

    #[test]
    fn generalized_bias_is_added_per_column() {
        let layer = GeneralizedFeedForwardLayer::new(
            array![[1.0]],
            array![[0.0, 0.0]],
            array![[0.0]],
            array![[0.0, 2.0]],
        )
        .unwrap();
        assert_eq!(layer.forward(&array![[0.0, 0.0]]).unwrap(), array![[0.0, 2.0]]);
    }

    #[test]
    fn identity_feed_forward() {
        let z = array![[1.5, -3.0], [0.25, 7.0]];
        assert_eq!(FeedForwardLayer::identity(2).forward(&z).unwrap(), z);
    }

    #[test]
    fn shape_errors_are_reported() {
        let layer = FeedForwardLayer::identity(3);
        assert!(matches!(layer.forward(&Matrix::zeros((2, 2))), Err(Error::Shape(_))));
        assert!(AttentionHead::new(
            Matrix::zeros((1, 2)),
            Matrix::zeros((1, 3)),
            Matrix::zeros((1, 2)),
            Matrix::zeros((2, 1))
        )
        .is_err());
    }
}
