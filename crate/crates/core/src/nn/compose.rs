//! Composition primitives: block-diagonal stacking of networks, identity
//! padding, and realizing ReLU networks as residual feed-forward stacks.

use ndarray::{s, Axis};

use super::fnn::Fnn;
use super::layers::{
    put_block, AttentionHead, EmbeddingLayer, FeedForward, FeedForwardLayer,
    GeneralizedFeedForwardLayer, Matrix, ProjectionLayer, SelfAttentionLayer, Vector,
};
use super::network::{Block, TransformerNetwork};
use super::ArchSpec;
use crate::error::{Error, Result};

/// Where a ReLU network lives inside a token: it reads `input_rows`, keeps its
/// hidden states in `scratch_rows` and writes its output to `output_rows`.
/// Scratch rows must be zero on entry and are zero again on exit; input rows
/// are cleared. Rows may overlap because all contributions are additive.
pub(crate) struct Placement<'a> {
    pub fnn: &'a Fnn,
    pub input_rows: Vec<usize>,
    pub output_rows: Vec<usize>,
    pub scratch_rows: Vec<usize>,
}

/// Feed-forward layers realizing several same-depth ReLU networks in parallel.
///
/// Layer `l` computes `relu(A_l N_l + b_l)` and removes `N_l` from the residual
/// stream with the pair `relu(z) − relu(−z) = z`, so each layer has width
/// `W_{l+1} + 2 W_l`.
pub(crate) fn place_fnns(dim: usize, jobs: &[Placement<'_>]) -> Result<Vec<FeedForwardLayer>> {
    let depth = jobs.first().map(|j| j.fnn.depth()).unwrap_or(0);
    if depth == 0 || jobs.iter().any(|j| j.fnn.depth() != depth) {
        return Err(Error::InvalidParam("placed networks need one common depth >= 1".into()));
    }
    for job in jobs {
        let widths = job.fnn.hidden_widths();
        let max_hidden = widths[..depth - 1].iter().copied().max().unwrap_or(0);
        if job.input_rows.len() != job.fnn.input_dim()
            || job.output_rows.len() != job.fnn.output_dim()
            || job.scratch_rows.len() < max_hidden
        {
            return Err(Error::Shape("placement rows do not fit the network".into()));
        }
        let all = job.input_rows.iter().chain(&job.output_rows).chain(&job.scratch_rows[..max_hidden]);
        if let Some(&r) = all.clone().find(|&&r| r >= dim) {
            return Err(Error::Shape(format!("row {r} outside token dim {dim}")));
        }
    }
    let mut layers = Vec::with_capacity(depth);
    for l in 0..depth {
        let width: usize = jobs
            .iter()
            .map(|j| {
                let src = if l == 0 { j.input_rows.len() } else { j.fnn.hidden_widths()[l - 1] };
                j.fnn.hidden_widths()[l] + 2 * src
            })
            .sum();
        let mut w1 = Matrix::zeros((width, dim));
        let mut b1 = Vector::zeros(width);
        let mut w2 = Matrix::zeros((dim, width));
        let mut b2 = Vector::zeros(dim);
        let mut unit = 0;
        for job in jobs {
            let src: Vec<usize> = if l == 0 {
                job.input_rows.clone()
            } else {
                job.scratch_rows[..job.fnn.hidden_widths()[l - 1]].to_vec()
            };
            let (a, b) = &job.fnn.layers()[l];
            let last = l + 1 == depth;
            let (a_out, b_out) = &job.fnn.layers()[depth];
            for k in 0..a.nrows() {
                for (c, &row) in src.iter().enumerate() {
                    w1[[unit, row]] += a[[k, c]];
                }
                b1[unit] = b[k];
                if last {
                    for (o, &row) in job.output_rows.iter().enumerate() {
                        w2[[row, unit]] += a_out[[o, k]];
                    }
                } else {
                    w2[[job.scratch_rows[k], unit]] += 1.0;
                }
                unit += 1;
            }
            if last {
                for (o, &row) in job.output_rows.iter().enumerate() {
                    b2[row] += b_out[o];
                }
            }
            for &row in &src {
                w1[[unit, row]] = 1.0;
                w2[[row, unit]] -= 1.0;
                w1[[unit + 1, row]] = -1.0;
                w2[[row, unit + 1]] += 1.0;
                unit += 2;
            }
        }
        layers.push(FeedForwardLayer::new(w1, b1, w2, b2)?);
    }
    Ok(layers)
}

/// A token-wise ReLU network realized as residual feed-forward layers, with the
/// embedding `(x; 0)` and the projection reading the leading rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FfStack {
    pub embedding: EmbeddingLayer,
    pub layers: Vec<FeedForwardLayer>,
    pub projection: ProjectionLayer,
}

impl FfStack {
    pub fn into_network(self) -> Result<TransformerNetwork> {
        let blocks = self.layers.into_iter().map(Block::feed_forward).collect();
        TransformerNetwork::new(self.embedding, blocks, self.projection)
    }
}

/// One feed-forward layer per hidden layer of `fnn`, each of width at most
/// `3·max(width, d_in)`; applied column-wise the stack reproduces `fnn` exactly.
pub fn fnn_to_ff_stack(fnn: &Fnn, n: usize) -> Result<FfStack> {
    if fnn.depth() < 2 {
        return Err(Error::Unsupported(format!(
            "feed-forward stack needs depth >= 2, got {} (prepend an identity layer)",
            fnn.depth()
        )));
    }
    let d_in = fnn.input_dim();
    let d_out = fnn.output_dim();
    let dim = d_in.max(d_out).max(fnn.width());
    let layers = place_fnns(
        dim,
        &[Placement {
            fnn,
            input_rows: (0..d_in).collect(),
            output_rows: (0..d_out).collect(),
            scratch_rows: (0..dim).collect(),
        }],
    )?;
    Ok(FfStack {
        embedding: EmbeddingLayer::identity(dim, d_in, n),
        layers,
        projection: ProjectionLayer::identity(d_out, dim),
    })
}

/// Entrywise clamp to `[−B, B]`: with the residual term,
/// `x − relu(x − B) + relu(−x − B)`.
pub fn truncation_layer(bound: f64, dim: usize) -> Result<FeedForwardLayer> {
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(Error::InvalidParam(format!("truncation bound must be positive, got {bound}")));
    }
    let mut w1 = Matrix::zeros((2 * dim, dim));
    let mut w2 = Matrix::zeros((dim, 2 * dim));
    let mut b1 = Vector::zeros(2 * dim);
    for i in 0..dim {
        w1[[2 * i, i]] = 1.0;
        b1[2 * i] = -bound;
        w2[[i, 2 * i]] = -1.0;
        w1[[2 * i + 1, i]] = -1.0;
        b1[2 * i + 1] = -bound;
        w2[[i, 2 * i + 1]] = 1.0;
    }
    FeedForwardLayer::new(w1, b1, w2, Vector::zeros(dim))
}

fn lift_head(head: &AttentionHead, offset: usize, dim: usize, head_size: usize) -> Result<AttentionHead> {
    let lift_in = |m: &Matrix| {
        let mut out = Matrix::zeros((head_size, dim));
        put_block(&mut out, 0, offset, m);
        out
    };
    let mut w_o = Matrix::zeros((dim, head_size));
    put_block(&mut w_o, offset, 0, &head.w_o);
    AttentionHead::new(lift_in(&head.w_v), lift_in(&head.w_k), lift_in(&head.w_q), w_o)
}

/// Block-diagonal combination of the blocks of several networks; networks with
/// fewer blocks are padded at the end with identity blocks.
fn diagonal_blocks(nets: &[&TransformerNetwork]) -> Result<Vec<Block>> {
    let n = nets[0].spec().n;
    let dim: usize = nets.iter().map(|t| t.spec().dim).sum();
    let head_size = nets.iter().map(|t| t.spec().head_size).max().unwrap_or(1);
    let depth = nets.iter().map(|t| t.spec().depth).max().unwrap_or(0);
    let mut blocks = Vec::with_capacity(depth);
    for l in 0..depth {
        let parts: Vec<Option<&Block>> = nets.iter().map(|t| t.blocks().get(l)).collect();
        let mut heads = Vec::new();
        let mut offset = 0;
        for (t, part) in nets.iter().zip(&parts) {
            if let Some(att) = part.and_then(|b| b.attention.as_ref()) {
                for h in att.heads() {
                    heads.push(lift_head(h, offset, dim, head_size)?);
                }
            }
            offset += t.spec().dim;
        }
        let attention = if heads.is_empty() { None } else { Some(SelfAttentionLayer::new(heads)?) };
        let generalized = parts.iter().flatten().any(|b| b.ff.is_generalized());
        let width: usize = parts.iter().map(|p| p.map_or(0, |b| b.ff.width())).sum::<usize>().max(1);
        let mut w1 = Matrix::zeros((width, dim));
        let mut w2 = Matrix::zeros((dim, width));
        let mut b1 = Matrix::zeros((width, n));
        let mut b2 = Matrix::zeros((dim, n));
        let (mut row, mut unit) = (0, 0);
        for (t, part) in nets.iter().zip(&parts) {
            if let Some(b) = part {
                let g = b.ff.to_generalized(n);
                put_block(&mut w1, unit, row, &g.w1);
                put_block(&mut w2, row, unit, &g.w2);
                put_block(&mut b1, unit, 0, &g.b1);
                put_block(&mut b2, row, 0, &g.b2);
                unit += g.width();
            }
            row += t.spec().dim;
        }
        let ff = if generalized {
            FeedForward::Generalized(GeneralizedFeedForwardLayer::new(w1, b1, w2, b2)?)
        } else {
            let col = |m: &Matrix| m.column(0).to_owned();
            FeedForward::Standard(FeedForwardLayer::new(w1, col(&b1), w2, col(&b2))?)
        };
        blocks.push(Block { attention, ff });
    }
    Ok(blocks)
}

fn combined_spec(nets: &[&TransformerNetwork], d_x: usize, d_y: usize) -> ArchSpec {
    let specs: Vec<&ArchSpec> = nets.iter().map(|t| t.spec()).collect();
    ArchSpec {
        d_x,
        d_y,
        n: specs[0].n,
        dim: specs.iter().map(|s| s.dim).sum(),
        heads: specs.iter().map(|s| s.heads).sum(),
        head_size: specs.iter().map(|s| s.head_size).max().unwrap_or(1),
        width: specs.iter().map(|s| s.width).sum(),
        depth: specs.iter().map(|s| s.depth).max().unwrap_or(1),
    }
}

fn check_same_n(nets: &[&TransformerNetwork]) -> Result<()> {
    if nets.is_empty() {
        return Err(Error::InvalidParam("no networks to combine".into()));
    }
    let n = nets[0].spec().n;
    if nets.iter().any(|t| t.spec().n != n) {
        return Err(Error::Shape("networks disagree on sequence length n".into()));
    }
    Ok(())
}

fn stack_rows(mats: &[&Matrix]) -> Matrix {
    let views: Vec<_> = mats.iter().map(|m| m.view()).collect();
    ndarray::concatenate(Axis(0), &views).expect("equal column counts")
}

fn block_diag(mats: &[&Matrix]) -> Matrix {
    let rows = mats.iter().map(|m| m.nrows()).sum();
    let cols = mats.iter().map(|m| m.ncols()).sum();
    let mut out = Matrix::zeros((rows, cols));
    let (mut r, mut c) = (0, 0);
    for m in mats {
        put_block(&mut out, r, c, m);
        r += m.nrows();
        c += m.ncols();
    }
    out
}

/// Acts on vertically stacked inputs and returns the stacked outputs.
pub fn concat_networks(n1: &TransformerNetwork, n2: &TransformerNetwork) -> Result<TransformerNetwork> {
    let nets = [n1, n2];
    check_same_n(&nets)?;
    let spec = combined_spec(&nets, n1.spec().d_x + n2.spec().d_x, n1.spec().d_y + n2.spec().d_y);
    let embedding = EmbeddingLayer::new(
        block_diag(&[&n1.embedding().e_in, &n2.embedding().e_in]),
        stack_rows(&[&n1.embedding().p, &n2.embedding().p]),
    )?;
    let projection = ProjectionLayer::new(block_diag(&[&n1.projection().e_out, &n2.projection().e_out]));
    TransformerNetwork::with_spec(spec, embedding, diagonal_blocks(&nets)?, projection)
}

/// Output `n1(X) + n2(X)`.
pub fn sum_networks(n1: &TransformerNetwork, n2: &TransformerNetwork) -> Result<TransformerNetwork> {
    let nets = [n1, n2];
    check_same_n(&nets)?;
    let (s1, s2) = (n1.spec(), n2.spec());
    if s1.d_x != s2.d_x || s1.d_y != s2.d_y {
        return Err(Error::Shape("summation needs equal input and output dims".into()));
    }
    let spec = combined_spec(&nets, s1.d_x, s1.d_y);
    let embedding = EmbeddingLayer::new(
        stack_rows(&[&n1.embedding().e_in, &n2.embedding().e_in]),
        stack_rows(&[&n1.embedding().p, &n2.embedding().p]),
    )?;
    let e_out = ndarray::concatenate(Axis(1), &[n1.projection().e_out.view(), n2.projection().e_out.view()])
        .expect("equal output dims");
    TransformerNetwork::with_spec(spec, embedding, diagonal_blocks(&nets)?, ProjectionLayer::new(e_out))
}

/// All networks read the same input; outputs are stacked vertically.
pub fn parallel_networks(nets: &[&TransformerNetwork]) -> Result<TransformerNetwork> {
    check_same_n(nets)?;
    let d_x = nets[0].spec().d_x;
    if nets.iter().any(|t| t.spec().d_x != d_x) {
        return Err(Error::Shape("parallel networks need equal input dims".into()));
    }
    let d_y = nets.iter().map(|t| t.spec().d_y).sum();
    let spec = combined_spec(nets, d_x, d_y);
    let e_in: Vec<&Matrix> = nets.iter().map(|t| &t.embedding().e_in).collect();
    let p: Vec<&Matrix> = nets.iter().map(|t| &t.embedding().p).collect();
    let e_out: Vec<&Matrix> = nets.iter().map(|t| &t.projection().e_out).collect();
    let embedding = EmbeddingLayer::new(stack_rows(&e_in), stack_rows(&p))?;
    TransformerNetwork::with_spec(spec, embedding, diagonal_blocks(nets)?, ProjectionLayer::new(block_diag(&e_out)))
}

/// Appends `extra` zero rows to the token dimension; the map is unchanged.
pub(crate) fn widen_network(net: &TransformerNetwork, extra: usize) -> Result<TransformerNetwork> {
    let spec = net.spec();
    let dim = spec.dim + extra;
    let pad_rows = |m: &Matrix| {
        let mut out = Matrix::zeros((m.nrows() + extra, m.ncols()));
        put_block(&mut out, 0, 0, m);
        out
    };
    let pad_cols = |m: &Matrix| {
        let mut out = Matrix::zeros((m.nrows(), m.ncols() + extra));
        put_block(&mut out, 0, 0, m);
        out
    };
    let pad_vec = |v: &Vector| {
        let mut out = Vector::zeros(v.len() + extra);
        out.slice_mut(s![..v.len()]).assign(v);
        out
    };
    let embedding = EmbeddingLayer::new(pad_rows(&net.embedding().e_in), pad_rows(&net.embedding().p))?;
    let mut blocks = Vec::with_capacity(net.blocks().len());
    for b in net.blocks() {
        let attention = match &b.attention {
            Some(a) => Some(SelfAttentionLayer::new(
                a.heads()
                    .iter()
                    .map(|h| AttentionHead::new(pad_cols(&h.w_v), pad_cols(&h.w_k), pad_cols(&h.w_q), pad_rows(&h.w_o)))
                    .collect::<Result<Vec<_>>>()?,
            )?),
            None => None,
        };
        let ff = match &b.ff {
            FeedForward::Standard(f) => {
                FeedForward::Standard(FeedForwardLayer::new(pad_cols(&f.w1), f.b1.clone(), pad_rows(&f.w2), pad_vec(&f.b2))?)
            }
            FeedForward::Generalized(g) => FeedForward::Generalized(GeneralizedFeedForwardLayer::new(
                pad_cols(&g.w1),
                g.b1.clone(),
                pad_rows(&g.w2),
                pad_rows(&g.b2),
            )?),
        };
        blocks.push(Block { attention, ff });
    }
    let projection = ProjectionLayer::new(pad_cols(&net.projection().e_out));
    TransformerNetwork::with_spec(ArchSpec { dim, ..*spec }, embedding, blocks, projection)
}
