//! Generalized Transformer realizing the superposition `F(X) = G(Σ_q φ(X_{:,q}))`
//! with Cantor-code inner maps and a piecewise-linear outer map.
//!
//! Token layout in `D = 4 d_x n` rows: rows `[0, d_x)` carry the working value,
//! rows `[d_x, 2 d_x)` the column sums, everything else is scratch for the
//! digit extractors.

use std::collections::BTreeMap;

use super::cantor::{cantor_decode, interpolation_points, phi_truncated, CantorCode, OmegaK};
use super::phi::{phi_bank, PhiCopy};
use crate::certificate::{ApproxCertificate, MeasureConfig};
use crate::error::Result;
use crate::grid::checked_pow;
use crate::metrics::{lp_error_mc, sup_error_mc, PointNorm, RegionFilter};
use crate::nn::{
    place_fnns, put_block, ArchSpec, AttentionHead, Block, EmbeddingLayer, FeedForwardLayer,
    GeneralizedFeedForwardLayer, Matrix, Placement, ProjectionLayer, SelfAttentionLayer, TransformerNetwork, Vector,
};
use crate::target::TargetFunction;

fn token_dim(d_x: usize, n: usize) -> usize {
    4 * d_x * n
}

/// Layer adding `2(j−1)` to rows `[0, d_x)` of column `j`.
fn column_offset_layer(dim: usize, d_x: usize, n: usize) -> Result<GeneralizedFeedForwardLayer> {
    let b2 = Matrix::from_shape_fn((dim, n), |(r, j)| if r < d_x { 2.0 * j as f64 } else { 0.0 });
    GeneralizedFeedForwardLayer::new(Matrix::zeros((1, dim)), Matrix::zeros((1, n)), Matrix::zeros((dim, 1)), b2)
}

/// `2K + 2` layers mapping `X` to `Z_1`, whose every row in column `j` is
/// `3 Σ_p 3^{−p} 3^{−(j−1)d_x} φ̃_K(X_{p,j})`; summed over columns this is the
/// Cantor code of `X` on `Ω_K`.
///
/// After the column offsets, one bank evaluates `ψ(y) = Σ_q 3^{−(q−1)d_x} φ̃(y − 2(q−1))`
/// for every row. In column `j` the terms `q < j` saturate at `φ̃(1)` and
/// `q > j` vanish; the resulting constant `c_j` is removed by a per-column bias.
pub fn build_inner_stack(k: usize, d_x: usize, n: usize, margin: f64) -> Result<Vec<GeneralizedFeedForwardLayer>> {
    let dim = token_dim(d_x, n);
    let d = d_x * n;
    let scale = |p: usize, q: usize| 3f64.powi(-((q * d_x + p) as i32));
    let copies: Vec<PhiCopy> = (0..d_x)
        .flat_map(|p| (0..n).map(move |q| (p, q)))
        .map(|(p, q)| PhiCopy { input: p, shift: 2.0 * q as f64, weights: vec![scale(p, q); d_x] })
        .collect();
    let bank = phi_bank(k, d, margin, d_x, d_x, &copies)?;
    let mut placed = place_fnns(
        dim,
        &[Placement {
            fnn: &bank,
            input_rows: (0..d_x).collect(),
            output_rows: (0..d_x).collect(),
            scratch_rows: (0..dim).collect(),
        }],
    )?;

    let top = phi_truncated(1.0, k, d);
    let last = placed.pop().expect("bank has depth K + 1");
    let mut last = GeneralizedFeedForwardLayer::from_standard(&last, n);
    for j in 0..n {
        let c_j: f64 = (0..d_x).flat_map(|p| (0..j).map(move |q| scale(p, q))).sum::<f64>() * top;
        for r in 0..d_x {
            last.b2[[r, j]] -= c_j;
        }
    }

    let mut layers = Vec::with_capacity(2 * k + 2);
    layers.push(column_offset_layer(dim, d_x, n)?);
    layers.extend(placed.iter().map(|l| GeneralizedFeedForwardLayer::from_standard(l, n)));
    layers.push(last);
    while layers.len() < 2 * k + 2 {
        layers.push(GeneralizedFeedForwardLayer::from_standard(&FeedForwardLayer::identity(dim), n));
    }
    Ok(layers)
}

/// Attention writing column sums of rows `[0, d_x)` into rows `[d_x, 2d_x)`,
/// and a layer moving them back with offsets: `Z_2[:, v] = Σ_j Z_1[:, j] + 2(v−1)`.
pub fn build_column_sum_block(d_x: usize, n: usize) -> Result<(SelfAttentionLayer, GeneralizedFeedForwardLayer)> {
    let dim = token_dim(d_x, n);
    let eye = Matrix::eye(d_x);
    let mut w_v = Matrix::zeros((d_x, dim));
    put_block(&mut w_v, 0, 0, &eye);
    let mut w_o = Matrix::zeros((dim, d_x));
    put_block(&mut w_o, d_x, 0, &(&eye * n as f64));
    let attention = SelfAttentionLayer::new(vec![AttentionHead::averaging(w_v, w_o)?])?;

    let mut w1 = Matrix::zeros((4 * d_x, dim));
    put_block(&mut w1, 0, 0, &eye);
    put_block(&mut w1, d_x, 0, &-&eye);
    put_block(&mut w1, 2 * d_x, d_x, &eye);
    put_block(&mut w1, 3 * d_x, d_x, &-&eye);
    let mut w2 = Matrix::zeros((dim, 4 * d_x));
    put_block(&mut w2, 0, 0, &-&eye);
    put_block(&mut w2, 0, d_x, &eye);
    put_block(&mut w2, 0, 2 * d_x, &eye);
    put_block(&mut w2, 0, 3 * d_x, &-&eye);
    put_block(&mut w2, d_x, 2 * d_x, &-&eye);
    put_block(&mut w2, d_x, 3 * d_x, &eye);
    let b2 = Matrix::from_shape_fn((dim, n), |(r, v)| if r < d_x { 2.0 * v as f64 } else { 0.0 });
    let ff = GeneralizedFeedForwardLayer::new(w1, Matrix::zeros((4 * d_x, n)), w2, b2)?;
    Ok((attention, ff))
}

/// Breakpoints `s_j + 2(v−1)` and, per output row, the values `F(decode(s_j))_{u,v}`.
/// The last point `s = 1` stores `F` at the all-ones matrix.
fn outer_table(f: &TargetFunction, k: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let (d_x, n) = (f.d_x(), f.n());
    let points = interpolation_points(k, d_x, n)?;
    let bits = d_x * n * k;
    let decoded: Vec<Matrix> = (0..points.len())
        .map(|t| {
            if t == points.len() - 1 {
                return Ok(f.eval(&Matrix::ones((d_x, n))));
            }
            let digits = (0..bits).map(|j| 2 * ((t >> (bits - 1 - j)) & 1) as u8).collect();
            Ok(f.eval(&cantor_decode(&CantorCode::from_digits(digits, k, d_x, n)?)?))
        })
        .collect::<Result<_>>()?;
    let mut breaks = Vec::with_capacity(n * points.len());
    let mut values = vec![Vec::with_capacity(n * points.len()); d_x];
    for v in 0..n {
        for (s, g) in points.iter().zip(&decoded) {
            breaks.push(s + 2.0 * v as f64);
            for (u, vals) in values.iter_mut().enumerate() {
                vals.push(g[[u, v]]);
            }
        }
    }
    Ok((breaks, values))
}

/// Row `u` becomes the piecewise-linear interpolant of `G_u` through the
/// breakpoints, constant outside `[0, 2n − 1]`; `n(2^{d_x n K} + 1)`
/// shared hinge units plus `2 d_x` units clearing the old value.
pub fn build_outer_interp_layer(f: &TargetFunction, k: usize) -> Result<GeneralizedFeedForwardLayer> {
    let (d_x, n) = (f.d_x(), f.n());
    let dim = token_dim(d_x, n);
    let (breaks, values) = outer_table(f, k)?;
    let hinges = breaks.len();
    let width = hinges + 2 * d_x;
    let mut w1 = Matrix::zeros((width, dim));
    let mut b1 = Vector::zeros(width);
    let mut w2 = Matrix::zeros((dim, width));
    let mut b2 = Vector::zeros(dim);
    for (i, &t) in breaks.iter().enumerate() {
        w1[[i, 0]] = 1.0;
        b1[i] = -t;
    }
    for (u, vals) in values.iter().enumerate() {
        let slope = |i: usize| {
            if i + 1 >= hinges {
                0.0
            } else {
                (vals[i + 1] - vals[i]) / (breaks[i + 1] - breaks[i])
            }
        };
        b2[u] = vals[0];
        let mut before = 0.0;
        for i in 0..hinges {
            let after = slope(i);
            w2[[u, i]] = after - before;
            before = after;
        }
        let c = hinges + 2 * u;
        w1[[c, u]] = 1.0;
        w2[[u, c]] = -1.0;
        w1[[c + 1, u]] = -1.0;
        w2[[u, c + 1]] = 1.0;
    }
    let layer = FeedForwardLayer::new(w1, b1, w2, b2)?;
    Ok(GeneralizedFeedForwardLayer::from_standard(&layer, n))
}

/// The full superposition network with `2K + 4` blocks.
pub fn build_kst_network(f: &TargetFunction, k: usize, margin: f64) -> Result<TransformerNetwork> {
    let (d_x, n) = (f.d_x(), f.n());
    let dim = token_dim(d_x, n);
    checked_pow(2, d_x * n * k, super::CODE_CAP, "interpolation points")?;
    let mut blocks: Vec<Block> = build_inner_stack(k, d_x, n, margin)?.into_iter().map(Block::feed_forward).collect();
    let (attention, sum_ff) = build_column_sum_block(d_x, n)?;
    blocks.push(Block::new(Some(attention), sum_ff));
    blocks.push(Block::feed_forward(build_outer_interp_layer(f, k)?));

    let mut e_in = Matrix::zeros((dim, d_x));
    put_block(&mut e_in, 0, 0, &Matrix::eye(d_x));
    let mut e_out = Matrix::zeros((d_x, dim));
    put_block(&mut e_out, 0, 0, &Matrix::eye(d_x));
    TransformerNetwork::new(EmbeddingLayer::new(e_in, Matrix::zeros((dim, n)))?, blocks, ProjectionLayer::new(e_out))
}

/// Superposition network certified by `2√(d_x n) K_H 2^{−γK}` entrywise on
/// `Ω_K` and `4(d_x n)^3 K_H 2^{−γK}` in L^p over the whole cube.
pub fn assemble_kst(f: &TargetFunction, k: usize, margin: f64, cfg: &MeasureConfig) -> Result<ApproxCertificate> {
    cfg.validate()?;
    let h = f.holder()?;
    let omega = OmegaK::new(k, margin)?;
    let (d_x, n) = (f.d_x(), f.n());
    let dn = (d_x * n) as f64;
    let mut notes = Vec::new();
    notes.extend(f.spot_check_holder(cfg.spot_check_pairs, cfg.seed)?);
    notes.push(format!(
        "per-coordinate measure of Ω_K at least {:.6} (target 1 − 2^(−Kγp) = {:.6})",
        omega.measure_lower_bound(),
        1.0 - 2f64.powf(-(k as f64) * h.gamma * cfg.p)
    ));

    let network = build_kst_network(f, k, margin)?;
    let decay = 2f64.powf(-h.gamma * k as f64);
    let bound = 2.0 * dn.sqrt() * h.k_h * decay;
    let lp_bound = 4.0 * dn.powi(3) * h.k_h * decay;
    let region = RegionFilter::OmegaK { k, margin };
    let net_f = |x: &Matrix| network.forward(x);
    let tgt_f = |x: &Matrix| Ok(f.eval(x));
    let sup = sup_error_mc(net_f, tgt_f, &region, (d_x, n), cfg.samples, cfg.seed, PointNorm::MaxEntry)?;
    let lp = lp_error_mc(net_f, tgt_f, cfg.p, &RegionFilter::Full, (d_x, n), cfg.samples, cfg.seed, PointNorm::Frobenius)?;

    let mut parameters = BTreeMap::new();
    parameters.insert("K".into(), k as f64);
    parameters.insert("margin".into(), margin);
    parameters.insert("gamma".into(), h.gamma);
    parameters.insert("K_H".into(), h.k_h);
    parameters.insert("p".into(), cfg.p);
    let d = d_x * n;
    let eps_power = checked_pow(2, d * k, usize::MAX, "width").unwrap_or(usize::MAX);
    let mut cert = ApproxCertificate {
        construction: "kst-superposition".into(),
        target: f.name().into(),
        parameters,
        built_dims: *network.spec(),
        claimed_dims: ArchSpec {
            d_x,
            d_y: d_x,
            n,
            dim: 4 * d,
            heads: 1,
            head_size: d_x,
            width: (3 * d).saturating_mul(eps_power),
            depth: 6 * k,
        },
        theoretical_bound: Some(bound),
        region,
        measured_sup: Some(sup),
        measured_lp: Some(lp),
        lp_bound: Some(lp_bound),
        pass: false,
        notes,
        seeds: vec![cfg.seed],
        network,
    };
    cert.settle();
    Ok(cert)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kst::cantor::cantor_encode;
    use crate::target::TargetSpec;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn run_stack(layers: &[GeneralizedFeedForwardLayer], x: &Matrix) -> Matrix {
        let (d_x, n) = x.dim();
        let mut z = Matrix::zeros((token_dim(d_x, n), n));
        put_block(&mut z, 0, 0, x);
        layers.iter().fold(z, |z, l| l.forward(&z).unwrap())
    }

    #[test]
    fn inner_stack_hand_values() {
        let m = OmegaK::default_margin(1);
        let layers = build_inner_stack(1, 1, 2, m).unwrap();
        assert_eq!(layers.len(), 4);
        let z = run_stack(&layers, &array![[0.5, 0.0]]);
        assert!((z[[0, 0]] - 2.0 / 3.0).abs() < 1e-12 && z[[0, 1]].abs() < 1e-12, "{z}");
        assert!(z.slice(ndarray::s![1.., ..]).iter().all(|v| v.abs() < 1e-12));
        let zero = run_stack(&build_inner_stack(3, 2, 2, OmegaK::default_margin(3)).unwrap(), &Matrix::zeros((2, 2)));
        assert!(zero.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn inner_stack_columns_sum_to_the_code() {
        let (k, d_x, n) = (2, 2, 2);
        let om = OmegaK::new(k, OmegaK::default_margin(k)).unwrap();
        let layers = build_inner_stack(k, d_x, n, om.margin).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let x = Matrix::from_shape_fn((d_x, n), |_| rng.random::<f64>());
            if !om.contains(&x) {
                continue;
            }
            let z = run_stack(&layers, &x);
            let code = cantor_encode(&x, k).value;
            for r in 0..d_x {
                assert!((z.row(r).sum() - code).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn column_sums() {
        let (att, ff) = build_column_sum_block(1, 2).unwrap();
        let mut z = Matrix::zeros((8, 2));
        z[[0, 0]] = 0.3;
        z[[0, 1]] = 0.4;
        let out = ff.forward(&att.forward(&z).unwrap()).unwrap();
        assert!((out[[0, 0]] - 0.7).abs() < 1e-15 && (out[[0, 1]] - 2.7).abs() < 1e-15);
        assert!(out.slice(ndarray::s![1.., ..]).iter().all(|v| v.abs() < 1e-15));
        let (att1, ff1) = build_column_sum_block(1, 1).unwrap();
        let mut z1 = Matrix::zeros((4, 1));
        z1[[0, 0]] = 0.9;
        assert!((ff1.forward(&att1.forward(&z1).unwrap()).unwrap()[[0, 0]] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn outer_layer_interpolates() {
        let f = TargetSpec::SineProduct { gamma: 1.0, k_h: 1.0 }.build(1, 2).unwrap();
        let k = 2;
        let layer = build_outer_interp_layer(&f, k).unwrap();
        assert!(layer.width() <= 2 * (16 + 1) + 2);
        let (breaks, values) = outer_table(&f, k).unwrap();
        let top = values[0].iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (i, &t) in breaks.iter().enumerate() {
            let mut z = Matrix::zeros((8, 2));
            z.row_mut(0).fill(t);
            let out = layer.forward(&z).unwrap();
            assert!((out[[0, 0]] - values[0][i]).abs() < 1e-9);
        }
        for t in [-1.0, 0.1, 1.5, 2.9, 7.0] {
            let mut z = Matrix::zeros((8, 2));
            z.row_mut(0).fill(t);
            assert!(layer.forward(&z).unwrap()[[0, 0]].abs() <= top + 1e-9);
        }
    }

    #[test]
    fn constant_target_exact() {
        let f = TargetSpec::Constant { value: 0.3 }.build(1, 2).unwrap();
        let cfg = MeasureConfig { samples: 500, spot_check_pairs: 50, ..MeasureConfig::default() };
        let cert = assemble_kst(&f, 2, OmegaK::default_margin(2), &cfg).unwrap();
        assert!(cert.measured_sup.as_ref().unwrap().value < 1e-9);
        assert!(cert.measured_lp.as_ref().unwrap().value < 1e-9);
        assert_eq!(cert.built_dims.depth, 2 * 2 + 4);
        assert_eq!(cert.built_dims.dim, 8);
    }

    #[test]
    fn coordinate_target_within_bound() {
        let f = TargetSpec::Coordinate { row: 0, col: 0 }.build(1, 2).unwrap();
        let cfg = MeasureConfig { samples: 2000, p: 1.0, spot_check_pairs: 50, ..MeasureConfig::default() };
        let cert = assemble_kst(&f, 3, OmegaK::default_margin(3), &cfg).unwrap();
        assert!(cert.pass, "{:?}", cert.measured_sup);
    }
}
