//! Uniform approximation from `3^{d_x n}` shifted grid networks reduced by a
//! tree of middle-of-three selections.
//!
//! Each input entry is shifted by `−δ`, `0` or `+δ` in some copy. For every
//! `X` and entry at most one of the three shifts lands in a trifling strip, so
//! folding the copies one entry at a time with `mid` keeps a value that two
//! good copies bracket.

use std::collections::BTreeMap;

use super::holder::{check_piecewise_reference, grid_network, network_map, target_map};
use super::{checked_pow, GRID_CAP};
use crate::certificate::{ApproxCertificate, MeasureConfig};
use crate::error::{Error, Result};
use crate::metrics::{sup_error_grid, sup_error_mc, PointNorm, RegionFilter};
use crate::nn::{
    build_mid_fnn, parallel_networks, place_fnns, widen_network, ArchSpec, Block, FeedForwardLayer, Matrix,
    Placement, ProjectionLayer, TransformerNetwork,
};
use crate::target::TargetFunction;

/// Cap on the number of shifted copies.
pub const COPY_CAP: usize = 729;

/// `δ = 2^{−10}/(3K)`.
pub fn default_sup_delta(k: usize) -> f64 {
    1.0 / (3.0 * k as f64) / 1024.0
}

/// Shift of copy `c`: entry `l = p + q·d_x` moves by `(digit_l(c) − 1)·δ`,
/// reading `c` in base 3 with entry 0 least significant.
pub(crate) fn copy_shift(c: usize, delta: f64, d_x: usize, n: usize) -> Matrix {
    let mut rest = c;
    let mut s = Matrix::zeros((d_x, n));
    for l in 0..d_x * n {
        s[[l % d_x, l / d_x]] = ((rest % 3) as f64 - 1.0) * delta;
        rest /= 3;
    }
    s
}

/// Layers folding `copy_rows.len() = 3^levels` row groups into the first by
/// taking entrywise middles, level by level. `scratch` must hold seven rows per
/// middle taken at the first level.
pub(crate) fn mid_fold_layers(dim: usize, copy_rows: &[Vec<usize>], scratch: &[usize], levels: usize) -> Result<Vec<FeedForwardLayer>> {
    if checked_pow(3, levels, COPY_CAP, "copies")? != copy_rows.len() {
        return Err(Error::InvalidParam(format!("{} copies is not 3^{levels}", copy_rows.len())));
    }
    let mid = build_mid_fnn();
    let mut layers = Vec::with_capacity(2 * levels);
    for level in 1..=levels {
        let stride = 3usize.pow(level as u32 - 1);
        let mut jobs = Vec::new();
        let mut next_scratch = 0;
        for first in (0..copy_rows.len()).step_by(3 * stride) {
            for (r, &row) in copy_rows[first].iter().enumerate() {
                let rows = scratch
                    .get(next_scratch..next_scratch + 7)
                    .ok_or_else(|| Error::Shape("not enough scratch rows for the middle selections".into()))?;
                next_scratch += 7;
                jobs.push(Placement {
                    fnn: &mid,
                    input_rows: vec![row, copy_rows[first + stride][r], copy_rows[first + 2 * stride][r]],
                    output_rows: vec![row],
                    scratch_rows: rows.to_vec(),
                });
            }
        }
        layers.extend(place_fnns(dim, &jobs)?);
    }
    Ok(layers)
}

/// Middle-selection layers for `copies = 3^{d_x n}` blocks of `d_x` rows laid
/// out contiguously, followed by `7 d_x 3^{d_x n − 1}` scratch rows.
pub fn mid_selector_layers(copies: usize, d_x: usize, n: usize) -> Result<Vec<FeedForwardLayer>> {
    let levels = d_x * n;
    if checked_pow(3, levels, COPY_CAP, "copies")? != copies {
        return Err(Error::InvalidParam(format!("expected 3^{levels} copies, got {copies}")));
    }
    let scratch_len = 7 * d_x * copies / 3;
    let dim = copies * d_x + scratch_len;
    let copy_rows: Vec<Vec<usize>> = (0..copies).map(|c| (c * d_x..(c + 1) * d_x).collect()).collect();
    let scratch: Vec<usize> = (copies * d_x..dim).collect();
    mid_fold_layers(dim, &copy_rows, &scratch, levels)
}

/// Shifted copies plus the selection tree.
pub fn build_sup_network(f: &TargetFunction, k: usize, delta: f64) -> Result<TransformerNetwork> {
    let (d_x, n) = (f.d_x(), f.n());
    let levels = d_x * n;
    let copies = checked_pow(3, levels, COPY_CAP, "copies")?;
    checked_pow(k, levels, GRID_CAP, "grid size")?;
    let nets = (0..copies)
        .map(|c| grid_network(|g| f.eval(g), k, delta, d_x, n, Some(&copy_shift(c, delta, d_x, n))))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&TransformerNetwork> = nets.iter().collect();
    let stacked = parallel_networks(&refs)?;
    let per_copy = nets[0].spec().dim;
    let scratch_len = 7 * d_x * copies / 3;
    let wide = widen_network(&stacked, scratch_len)?;
    let dim = wide.spec().dim;

    let copy_rows: Vec<Vec<usize>> = (0..copies).map(|c| (c * per_copy..c * per_copy + d_x).collect()).collect();
    let scratch: Vec<usize> = (copies * per_copy..dim).collect();
    let fold = mid_fold_layers(dim, &copy_rows, &scratch, levels)?;

    let (_, embedding, mut blocks, _) = wide.into_parts();
    blocks.extend(fold.into_iter().map(Block::feed_forward));
    let mut e_out = Matrix::zeros((d_x, dim));
    for r in 0..d_x {
        e_out[[r, r]] = 1.0;
    }
    TransformerNetwork::new(embedding, blocks, ProjectionLayer::new(e_out))
}

/// Sup-norm network certified on the whole cube by
/// `(d_x n)^{γ/2} K_H K^{−γ} + d_x n K_H δ^γ`.
pub fn assemble_sup_norm(f: &TargetFunction, k: usize, delta: f64, cfg: &MeasureConfig) -> Result<ApproxCertificate> {
    cfg.validate()?;
    let kf = k as f64;
    if !(delta > 0.0 && delta <= 1.0 / (3.0 * kf)) {
        return Err(Error::InvalidParam(format!("sup construction needs 0 < δ <= 1/(3K), got {delta}")));
    }
    let h = f.holder()?;
    let (d_x, n) = (f.d_x(), f.n());
    let dn = d_x * n;
    let mut notes = Vec::new();
    notes.extend(f.spot_check_holder(cfg.spot_check_pairs, cfg.seed)?);
    notes.extend(check_piecewise_reference(f, k, 10_000, cfg.seed)?);

    let network = build_sup_network(f, k, delta)?;
    let dnf = dn as f64;
    let bound = dnf.powf(h.gamma / 2.0) * h.k_h * kf.powf(-h.gamma) + dnf * h.k_h * delta.powf(h.gamma);
    let region = RegionFilter::Full;
    let (net_f, tgt_f) = (network_map(&network), target_map(f));
    let mut sup = sup_error_mc(&net_f, &tgt_f, &region, (d_x, n), cfg.samples, cfg.seed, PointNorm::MaxEntry)?;
    if let Some(res) = cfg.grid_resolution {
        let grid = sup_error_grid(&net_f, &tgt_f, res, &region, (d_x, n), PointNorm::MaxEntry)?;
        if grid.value >= sup.value {
            sup = grid.with_holder_slack(h.gamma, h.k_h, res, dn);
        }
    }
    drop((net_f, tgt_f));

    let copies = checked_pow(3, dn, COPY_CAP, "copies")?;
    let base_width = 5 * n * checked_pow(k, dn, GRID_CAP, "grid size")?;
    let mut parameters = BTreeMap::new();
    parameters.insert("K".into(), kf);
    parameters.insert("delta".into(), delta);
    parameters.insert("gamma".into(), h.gamma);
    parameters.insert("K_H".into(), h.k_h);
    parameters.insert("copies".into(), copies as f64);
    let mut cert = ApproxCertificate {
        construction: "grid-sup-norm".into(),
        target: f.name().into(),
        parameters,
        built_dims: *network.spec(),
        claimed_dims: ArchSpec {
            d_x,
            d_y: d_x,
            n,
            dim: copies * d_x.max(5 * d_x),
            heads: copies,
            head_size: 1,
            width: copies * base_width.max(14 * d_x),
            depth: 2 + 2 * dn,
        },
        theoretical_bound: Some(bound),
        region,
        measured_sup: Some(sup),
        measured_lp: None,
        lp_bound: None,
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
    use crate::target::TargetSpec;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mid3(a: f64, b: f64, c: f64) -> f64 {
        a.max(b).min(a.min(b).max(c))
    }

    /// Folds consecutive triples until one value is left.
    fn mid_tree(values: &[f64]) -> f64 {
        if values.len() == 1 {
            return values[0];
        }
        let next: Vec<f64> = values.chunks(3).map(|c| mid3(c[0], c[1], c[2])).collect();
        mid_tree(&next)
    }

    fn apply(layers: &[FeedForwardLayer], z: Matrix) -> Matrix {
        layers.iter().fold(z, |z, l| l.forward(&z).unwrap())
    }

    #[test]
    fn three_copies() {
        let layers = mid_selector_layers(3, 1, 1).unwrap();
        assert_eq!(layers.len(), 2);
        let mut z = Matrix::zeros((10, 2));
        z.column_mut(0).slice_mut(ndarray::s![..3]).assign(&array![1.0, 3.0, 2.0]);
        z.column_mut(1).slice_mut(ndarray::s![..3]).assign(&array![5.0, 5.0, 5.0]);
        let out = apply(&layers, z);
        assert!((out[[0, 0]] - 2.0).abs() < 1e-12);
        assert!((out[[0, 1]] - 5.0).abs() < 1e-12);
        assert!(out.slice(ndarray::s![3.., ..]).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn matches_recursive_middle() {
        let (d_x, n) = (1, 2);
        let copies = 9;
        let layers = mid_selector_layers(copies, d_x, n).unwrap();
        assert_eq!(layers.len(), 4);
        assert!(layers.iter().all(|l| l.width() <= 14 * d_x * copies));
        let dim = layers[0].dim();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let vals: Vec<f64> = (0..copies).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut z = Matrix::zeros((dim, 1));
            for (c, v) in vals.iter().enumerate() {
                z[[c, 0]] = *v;
            }
            let out = apply(&layers, z);
            assert!((out[[0, 0]] - mid_tree(&vals)).abs() < 1e-9);
        }
    }

    #[test]
    fn copy_shifts() {
        assert_eq!(copy_shift(0, 0.1, 1, 2), array![[-0.1, -0.1]]);
        assert_eq!(copy_shift(4, 0.1, 1, 2), array![[0.0, 0.0]]);
        assert_eq!(copy_shift(5, 0.1, 1, 2), array![[0.1, 0.0]]);
    }

    #[test]
    fn constant_target_exact_everywhere() {
        let f = TargetSpec::Constant { value: -0.4 }.build(1, 1).unwrap();
        let cfg = MeasureConfig { samples: 500, grid_resolution: Some(101), spot_check_pairs: 100, ..MeasureConfig::default() };
        let cert = assemble_sup_norm(&f, 2, default_sup_delta(2), &cfg).unwrap();
        assert!(cert.measured_sup.as_ref().unwrap().value < 1e-9);
        assert!(cert.pass);
    }

    #[test]
    fn identity_bound_on_full_cube() {
        let f = TargetSpec::Coordinate { row: 0, col: 0 }.build(1, 1).unwrap();
        let k = 4;
        let delta = 1.0 / 12.0;
        let cfg = MeasureConfig { samples: 2000, grid_resolution: Some(2001), spot_check_pairs: 100, ..MeasureConfig::default() };
        let cert = assemble_sup_norm(&f, k, delta, &cfg).unwrap();
        let bound = cert.theoretical_bound.unwrap();
        assert!((bound - (0.25 + 1.0 / 12.0)).abs() < 1e-12);
        assert!(cert.pass, "{:?}", cert.measured_sup);
    }
}
