//! Transformer and ReLU-network data model, exact forward evaluation,
//! parameter counting and the composition primitives used by the builders.

mod compose;
mod fnn;
mod layers;
mod network;
mod serialize;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use compose::{
    concat_networks, fnn_to_ff_stack, parallel_networks, sum_networks, truncation_layer, FfStack,
};
pub(crate) use compose::{place_fnns, widen_network, Placement};
pub use fnn::{build_mid_fnn, Fnn};
pub use layers::{
    AttentionHead, EmbeddingLayer, FeedForward, FeedForwardLayer, GeneralizedFeedForwardLayer,
    Matrix, ProjectionLayer, SelfAttentionLayer, Vector,
};
pub(crate) use layers::put_block;
pub use network::{Block, NetworkKind, TransformerNetwork};
pub use serialize::NetworkDocument;

/// Dimensions `(d_x, d_y, n, D, H, S, W, L)` of a Transformer class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub d_x: usize,
    pub d_y: usize,
    pub n: usize,
    /// Embedding dimension `D`.
    pub dim: usize,
    pub heads: usize,
    pub head_size: usize,
    /// Feed-forward hidden width `W`.
    pub width: usize,
    /// Number of attention/feed-forward blocks `L`.
    pub depth: usize,
}

impl ArchSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        d_x: usize,
        d_y: usize,
        n: usize,
        dim: usize,
        heads: usize,
        head_size: usize,
        width: usize,
        depth: usize,
    ) -> Result<Self> {
        let spec = Self { d_x, d_y, n, dim, heads, head_size, width, depth };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.d_x,
            self.d_y,
            self.n,
            self.dim,
            self.heads,
            self.head_size,
            self.width,
            self.depth,
        ];
        if fields.iter().any(|&f| f == 0) {
            return Err(Error::InvalidParam(format!("all spec fields must be >= 1: {self:?}")));
        }
        if self.head_size > self.dim {
            return Err(Error::InvalidParam(format!(
                "head size {} exceeds embedding dim {}",
                self.head_size, self.dim
            )));
        }
        Ok(())
    }
}

/// `D·d_x + D·n + d_y·D + L(4HSD + 2WD + W + D)`.
pub fn param_count(spec: &ArchSpec) -> u64 {
    let [d_x, d_y, n, d, h, s, w, l] = [
        spec.d_x, spec.d_y, spec.n, spec.dim, spec.heads, spec.head_size, spec.width, spec.depth,
    ]
    .map(|v| v as u64);
    d * d_x + d * n + d_y * d + l * (4 * h * s * d + 2 * w * d + w + d)
}
