use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::layers::{
    all_finite, AttentionHead, EmbeddingLayer, FeedForward, FeedForwardLayer, Matrix,
    ProjectionLayer, SelfAttentionLayer,
};
use super::ArchSpec;
use crate::error::{Error, Result};

/// One attention sublayer (absent means identity) followed by one feed-forward sublayer.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub attention: Option<SelfAttentionLayer>,
    pub ff: FeedForward,
}

impl Block {
    pub fn new(attention: Option<SelfAttentionLayer>, ff: impl Into<FeedForward>) -> Self {
        Self { attention, ff: ff.into() }
    }

    pub fn feed_forward(ff: impl Into<FeedForward>) -> Self {
        Self::new(None, ff)
    }

    pub fn forward(&self, z: &Matrix) -> Result<Matrix> {
        let z = match &self.attention {
            Some(a) => a.forward(z)?,
            None => z.clone(),
        };
        self.ff.forward(&z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkKind {
    Standard,
    Generalized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerNetwork {
    spec: ArchSpec,
    embedding: EmbeddingLayer,
    blocks: Vec<Block>,
    projection: ProjectionLayer,
}

impl TransformerNetwork {
    /// Assembles a network whose spec is the tightest one fitting its layers.
    pub fn new(embedding: EmbeddingLayer, blocks: Vec<Block>, projection: ProjectionLayer) -> Result<Self> {
        let heads = blocks
            .iter()
            .filter_map(|b| b.attention.as_ref().map(|a| a.heads().len()))
            .max()
            .unwrap_or(1);
        let head_size = blocks
            .iter()
            .filter_map(|b| b.attention.as_ref().map(SelfAttentionLayer::max_head_size))
            .max()
            .unwrap_or(1);
        let width = blocks.iter().map(|b| b.ff.width()).max().unwrap_or(1).max(1);
        let spec = ArchSpec {
            d_x: embedding.e_in.ncols(),
            d_y: projection.e_out.nrows(),
            n: embedding.p.ncols(),
            dim: embedding.dim(),
            heads,
            head_size,
            width,
            depth: blocks.len(),
        };
        Self::with_spec(spec, embedding, blocks, projection)
    }

    /// Assembles a network inside a declared class; every layer must fit the spec.
    pub fn with_spec(
        spec: ArchSpec,
        embedding: EmbeddingLayer,
        blocks: Vec<Block>,
        projection: ProjectionLayer,
    ) -> Result<Self> {
        spec.validate()?;
        let d = spec.dim;
        if embedding.e_in.dim() != (d, spec.d_x) || embedding.p.dim() != (d, spec.n) {
            return Err(Error::Shape("embedding does not match spec".into()));
        }
        if projection.e_out.dim() != (spec.d_y, d) {
            return Err(Error::Shape("projection does not match spec".into()));
        }
        if blocks.len() != spec.depth {
            return Err(Error::Shape(format!(
                "spec declares {} blocks, got {}",
                spec.depth,
                blocks.len()
            )));
        }
        for (i, b) in blocks.iter().enumerate() {
            if let Some(a) = &b.attention {
                if a.dim() != d || a.heads().len() > spec.heads || a.max_head_size() > spec.head_size {
                    return Err(Error::Shape(format!("block {i}: attention exceeds spec")));
                }
            }
            if b.ff.dim() != d || b.ff.width() > spec.width {
                return Err(Error::Shape(format!("block {i}: feed-forward exceeds spec")));
            }
            if let FeedForward::Generalized(g) = &b.ff {
                if g.seq_len() != spec.n {
                    return Err(Error::Shape(format!("block {i}: bias columns != n")));
                }
            }
        }
        Ok(Self { spec, embedding, blocks, projection })
    }

    /// Every slot materialized with Gaussian weights of the given scale.
    pub fn random(spec: ArchSpec, scale: f64, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gauss = |r: usize, c: usize| {
            Matrix::from_shape_fn((r, c), |_| scale * rng.sample::<f64, _>(StandardNormal))
        };
        let (d, s, w) = (spec.dim, spec.head_size, spec.width);
        let embedding = EmbeddingLayer::new(gauss(d, spec.d_x), gauss(d, spec.n))?;
        let mut blocks = Vec::with_capacity(spec.depth);
        for _ in 0..spec.depth {
            let heads = (0..spec.heads)
                .map(|_| AttentionHead::new(gauss(s, d), gauss(s, d), gauss(s, d), gauss(d, s)))
                .collect::<Result<Vec<_>>>()?;
            let ff = FeedForwardLayer::new(
                gauss(w, d),
                gauss(w, 1).column(0).to_owned(),
                gauss(d, w),
                gauss(d, 1).column(0).to_owned(),
            )?;
            blocks.push(Block::new(Some(SelfAttentionLayer::new(heads)?), ff));
        }
        let projection = ProjectionLayer::new(gauss(spec.d_y, d));
        Self::with_spec(spec, embedding, blocks, projection)
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn embedding(&self) -> &EmbeddingLayer {
        &self.embedding
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn projection(&self) -> &ProjectionLayer {
        &self.projection
    }

    pub fn kind(&self) -> NetworkKind {
        if self.blocks.iter().any(|b| b.ff.is_generalized()) {
            NetworkKind::Generalized
        } else {
            NetworkKind::Standard
        }
    }

    pub fn into_parts(self) -> (ArchSpec, EmbeddingLayer, Vec<Block>, ProjectionLayer) {
        (self.spec, self.embedding, self.blocks, self.projection)
    }

    /// Number of scalars actually stored.
    pub fn weight_count(&self) -> usize {
        let mut count = self.embedding.e_in.len() + self.embedding.p.len() + self.projection.e_out.len();
        for b in &self.blocks {
            if let Some(a) = &b.attention {
                for h in a.heads() {
                    count += h.w_v.len() + h.w_k.len() + h.w_q.len() + h.w_o.len();
                }
            }
            count += b.ff.weight_count();
        }
        count
    }

    /// Hidden state after the embedding and the first `upto` blocks.
    pub fn hidden(&self, x: &Matrix, upto: usize) -> Result<Matrix> {
        let mut z = self.embedding.forward(x)?;
        if !all_finite(&z) {
            return Err(Error::NonFinite("embedding".into()));
        }
        for (i, block) in self.blocks.iter().take(upto).enumerate() {
            z = block.forward(&z)?;
            if !all_finite(&z) {
                return Err(Error::NonFinite(format!("block {i}")));
            }
        }
        Ok(z)
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let z = self.hidden(x, self.blocks.len())?;
        self.projection.forward(&z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param_count;
    use ndarray::array;

    #[test]
    fn identity_network_returns_input() {
        let embedding = EmbeddingLayer::identity(2, 2, 3);
        let blocks = vec![Block::feed_forward(FeedForwardLayer::identity(2))];
        let net = TransformerNetwork::new(embedding, blocks, ProjectionLayer::identity(2, 2)).unwrap();
        let x = array![[0.1, 0.2, 0.3], [-1.0, 5.0, 2.0]];
        assert_eq!(net.forward(&x).unwrap(), x);
    }

    #[test]
    fn random_network_materializes_every_slot() {
        let spec = ArchSpec::new(2, 3, 4, 5, 2, 3, 7, 2).unwrap();
        let net = TransformerNetwork::random(spec, 0.5, 1).unwrap();
        assert_eq!(net.weight_count() as u64, param_count(&spec));
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let spec = ArchSpec::new(2, 1, 3, 4, 1, 2, 3, 1).unwrap();
        let net = TransformerNetwork::random(spec, 0.5, 2).unwrap();
        assert!(matches!(net.forward(&Matrix::zeros((3, 3))), Err(Error::Shape(_))));
    }

    #[test]
    fn overflow_reports_block_index() {
        let spec = ArchSpec::new(1, 1, 2, 2, 1, 1, 2, 2).unwrap();
        let net = TransformerNetwork::random(spec, 1e200, 3).unwrap();
        let err = net.forward(&array![[1.0, 2.0]]).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)), "{err}");
    }
}
