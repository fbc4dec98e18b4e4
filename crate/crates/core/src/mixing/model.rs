//! Trainable scalar-output Transformer `X ↦ ⟨E_out N(X), e⟩` with a batched,
//! token-major forward pass and hand-written reverse mode.
//!
//! Activations are stored with one row per token (`N = B·n` rows for `B`
//! windows), so every linear map is one matrix product and attention only
//! loops inside each window.

use ndarray::{s, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    ArchSpec, AttentionHead, Block, EmbeddingLayer, FeedForwardLayer, Matrix, ProjectionLayer, SelfAttentionLayer,
    TransformerNetwork, Vector,
};

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub w_k: Matrix,
    pub w_q: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub heads: Vec<HeadParams>,
    pub w1: Matrix,
    pub b1: Vector,
    pub w2: Matrix,
    pub b2: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ArchSpec,
    pub e_in: Matrix,
    pub p: Matrix,
    pub blocks: Vec<BlockParams>,
    pub e_out: Matrix,
    /// The output functional `e`; the prediction is `Σ_j (E_out Z)_j e_j`.
    pub readout: Vector,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    /// Gaussian scale of the feed-forward weights and of `W_K`.
    pub scale: f64,
    /// Gaussian perturbation added to the identity-like embedding and projection.
    pub jitter: f64,
    /// Start with `e = 0`, so the initial predictor is identically zero.
    pub zero_readout: bool,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self { scale: 0.1, jitter: 0.01, zero_readout: false }
    }
}

struct HeadCache {
    k: Matrix,
    q: Matrix,
    v: Matrix,
    /// `a[(w·n + i)·n + j]`: weight of key token `i` for query token `j` in window `w`.
    a: Vec<f64>,
    mix: Matrix,
}

struct BlockCache {
    z_in: Matrix,
    heads: Vec<HeadCache>,
    z_mid: Matrix,
    h1: Matrix,
    r: Matrix,
}

struct Forward {
    x: Matrix,
    blocks: Vec<BlockCache>,
    z_out: Matrix,
    out: Vector,
    y: Vec<f64>,
}

fn check_spec(spec: &ArchSpec) -> Result<()> {
    spec.validate()?;
    if spec.d_y != 1 {
        return Err(Error::InvalidParam("regression model needs d_y = 1".into()));
    }
    Ok(())
}

impl Model {
    /// Identity-like embedding (input rows first, then a one-hot position
    /// where room allows), `W_Q = 0` so attention starts uniform, Gaussian
    /// `W_K`, `W_V`, `W_O` and feed-forward weights, and `e = 1/(d_x n)`.
    pub fn init(spec: ArchSpec, cfg: &InitConfig, seed: u64) -> Result<Self> {
        check_spec(&spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gauss = |r: usize, c: usize, scale: f64| {
            Matrix::from_shape_fn((r, c), |_| scale * rng.sample::<f64, _>(StandardNormal))
        };
        let (d, s, w, n, d_x) = (spec.dim, spec.head_size, spec.width, spec.n, spec.d_x);
        let mut e_in = gauss(d, d_x, cfg.jitter);
        for i in 0..d_x.min(d) {
            e_in[[i, i]] += 1.0;
        }
        let mut p = gauss(d, n, cfg.jitter);
        for j in 0..n {
            if d_x + j < d {
                p[[d_x + j, j]] += 1.0;
            }
        }
        let blocks = (0..spec.depth)
            .map(|_| BlockParams {
                heads: (0..spec.heads)
                    .map(|_| HeadParams {
                        w_k: gauss(s, d, cfg.scale),
                        w_q: Matrix::zeros((s, d)),
                        w_v: gauss(s, d, cfg.scale),
                        w_o: gauss(d, s, cfg.scale),
                    })
                    .collect(),
                w1: gauss(w, d, cfg.scale),
                b1: gauss(w, 1, cfg.scale).column(0).to_owned(),
                w2: gauss(d, w, cfg.scale),
                b2: Vector::zeros(d),
            })
            .collect();
        let mut e_out = gauss(1, d, cfg.jitter);
        e_out[[0, 0]] += 1.0;
        let readout = if cfg.zero_readout {
            Vector::zeros(n)
        } else {
            Vector::from_elem(n, 1.0 / (d_x * n) as f64)
        };
        Ok(Self { spec, e_in, p, blocks, e_out, readout })
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.raw_dim());
        let zv = |v: &Vector| Vector::zeros(v.len());
        Self {
            spec: self.spec,
            e_in: z(&self.e_in),
            p: z(&self.p),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockParams {
                    heads: b
                        .heads
                        .iter()
                        .map(|h| HeadParams { w_k: z(&h.w_k), w_q: z(&h.w_q), w_v: z(&h.w_v), w_o: z(&h.w_o) })
                        .collect(),
                    w1: z(&b.w1),
                    b1: zv(&b.b1),
                    w2: z(&b.w2),
                    b2: zv(&b.b2),
                })
                .collect(),
            e_out: z(&self.e_out),
            readout: zv(&self.readout),
        }
    }

    fn for_each_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        // Products with transposed operands may come back in column-major order.
        let standard = |a: &mut Matrix| {
            if !a.is_standard_layout() {
                *a = a.as_standard_layout().into_owned();
            }
        };
        standard(&mut self.e_in);
        standard(&mut self.p);
        standard(&mut self.e_out);
        for b in &mut self.blocks {
            b.heads.iter_mut().for_each(|h| [&mut h.w_k, &mut h.w_q, &mut h.w_v, &mut h.w_o].into_iter().for_each(standard));
            standard(&mut b.w1);
            standard(&mut b.w2);
        }
        let mut arrays: Vec<&mut [f64]> = vec![self.e_in.as_slice_mut().expect("standard layout")];
        arrays.push(self.p.as_slice_mut().expect("standard layout"));
        for b in &mut self.blocks {
            for h in &mut b.heads {
                for w in [&mut h.w_k, &mut h.w_q, &mut h.w_v, &mut h.w_o] {
                    arrays.push(w.as_slice_mut().expect("standard layout"));
                }
            }
            arrays.push(b.w1.as_slice_mut().expect("standard layout"));
            arrays.push(b.b1.as_slice_mut().expect("contiguous"));
            arrays.push(b.w2.as_slice_mut().expect("standard layout"));
            arrays.push(b.b2.as_slice_mut().expect("contiguous"));
        }
        arrays.push(self.e_out.as_slice_mut().expect("standard layout"));
        arrays.push(self.readout.as_slice_mut().expect("contiguous"));
        for a in arrays {
            f(a);
        }
    }

    /// All trainable values in a fixed order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.clone().for_each_mut(&mut |s| out.extend_from_slice(s));
        out
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        let total = self.to_flat().len();
        if values.len() != total {
            return Err(Error::Shape(format!("expected {total} parameters, got {}", values.len())));
        }
        let mut at = 0;
        self.for_each_mut(&mut |s| {
            s.copy_from_slice(&values[at..at + s.len()]);
            at += s.len();
        });
        Ok(())
    }

    /// The same map as a network of the shared evaluator, paired with the readout.
    pub fn to_network(&self) -> Result<(TransformerNetwork, Vector)> {
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                let heads = b
                    .heads
                    .iter()
                    .map(|h| AttentionHead::new(h.w_v.clone(), h.w_k.clone(), h.w_q.clone(), h.w_o.clone()))
                    .collect::<Result<Vec<_>>>()?;
                let ff = FeedForwardLayer::new(b.w1.clone(), b.b1.clone(), b.w2.clone(), b.b2.clone())?;
                Ok(Block::new(Some(SelfAttentionLayer::new(heads)?), ff))
            })
            .collect::<Result<Vec<_>>>()?;
        let net = TransformerNetwork::with_spec(
            self.spec,
            EmbeddingLayer::new(self.e_in.clone(), self.p.clone())?,
            blocks,
            ProjectionLayer::new(self.e_out.clone()),
        )?;
        Ok((net, self.readout.clone()))
    }

    fn stack_inputs(&self, xs: &[Matrix]) -> Result<Matrix> {
        let (d_x, n) = (self.spec.d_x, self.spec.n);
        let mut x = Matrix::zeros((xs.len() * n, d_x));
        for (w, win) in xs.iter().enumerate() {
            if win.dim() != (d_x, n) {
                return Err(Error::Shape(format!("window is {:?}, expected ({d_x}, {n})", win.dim())));
            }
            x.slice_mut(s![w * n..(w + 1) * n, ..]).assign(&win.t());
        }
        Ok(x)
    }

    fn forward(&self, xs: &[Matrix]) -> Result<Forward> {
        let n = self.spec.n;
        let windows = xs.len();
        let x = self.stack_inputs(xs)?;
        let mut z = x.dot(&self.e_in.t());
        for w in 0..windows {
            z.slice_mut(s![w * n..(w + 1) * n, ..]).scaled_add(1.0, &self.p.t());
        }
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let z_in = z;
            let mut z_mid = z_in.clone();
            let mut heads = Vec::with_capacity(b.heads.len());
            for h in &b.heads {
                let k = z_in.dot(&h.w_k.t());
                let q = z_in.dot(&h.w_q.t());
                let v = z_in.dot(&h.w_v.t());
                let mut a = vec![0.0; windows * n * n];
                let mut mix = Matrix::zeros(v.raw_dim());
                for w in 0..windows {
                    let base = w * n;
                    for j in 0..n {
                        let qj = q.row(base + j);
                        let mut col: Vec<f64> = (0..n).map(|i| k.row(base + i).dot(&qj)).collect();
                        let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        col.iter_mut().for_each(|c| *c = (*c - max).exp());
                        let sum: f64 = col.iter().sum();
                        for (i, c) in col.iter().enumerate() {
                            let weight = c / sum;
                            a[(base + i) * n + j] = weight;
                            mix.row_mut(base + j).scaled_add(weight, &v.row(base + i));
                        }
                    }
                }
                z_mid += &mix.dot(&h.w_o.t());
                heads.push(HeadCache { k, q, v, a, mix });
            }
            let mut h1 = z_mid.dot(&b.w1.t());
            h1 += &b.b1;
            let r = h1.mapv(|v| v.max(0.0));
            let mut z_out = &z_mid + &r.dot(&b.w2.t());
            z_out += &b.b2;
            caches.push(BlockCache { z_in, heads, z_mid, h1, r });
            z = z_out;
        }
        let out = z.dot(&self.e_out.row(0));
        let y = (0..windows)
            .map(|w| (0..n).map(|j| out[w * n + j] * self.readout[j]).sum())
            .collect();
        Ok(Forward { x, blocks: caches, z_out: z, out, y })
    }

    pub fn predict(&self, xs: &[Matrix]) -> Result<Vec<f64>> {
        Ok(self.forward(xs)?.y)
    }

    /// Mean squared error on `(xs, ys)`.
    pub fn risk(&self, xs: &[Matrix], ys: &[f64]) -> Result<f64> {
        let y = self.predict(xs)?;
        Ok(y.iter().zip(ys).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / ys.len().max(1) as f64)
    }

    /// Mean squared error and its gradient with respect to every parameter.
    pub fn risk_and_grad(&self, xs: &[Matrix], ys: &[f64]) -> Result<(f64, Model)> {
        if xs.len() != ys.len() || xs.is_empty() {
            return Err(Error::Shape(format!("{} windows for {} targets", xs.len(), ys.len())));
        }
        let n = self.spec.n;
        let windows = xs.len();
        let fwd = self.forward(xs)?;
        let scale = 1.0 / windows as f64;
        let resid: Vec<f64> = fwd.y.iter().zip(ys).map(|(a, b)| a - b).collect();
        let risk = resid.iter().map(|r| r * r).sum::<f64>() * scale;
        if !risk.is_finite() {
            return Err(Error::NonFinite("training risk".into()));
        }
        let mut g = self.zeros_like();

        let mut dout = Vector::zeros(windows * n);
        for (w, r) in resid.iter().enumerate() {
            let dy = 2.0 * r * scale;
            for j in 0..n {
                g.readout[j] += dy * fwd.out[w * n + j];
                dout[w * n + j] = dy * self.readout[j];
            }
        }
        g.e_out.row_mut(0).assign(&fwd.z_out.t().dot(&dout));
        let dout_col = dout.view().insert_axis(Axis(1));
        let mut dz = dout_col.dot(&self.e_out);

        for (bi, (b, c)) in self.blocks.iter().zip(&fwd.blocks).enumerate().rev() {
            let gb = &mut g.blocks[bi];
            gb.b2 = dz.sum_axis(Axis(0));
            gb.w2 = dz.t().dot(&c.r);
            let mut dh1 = dz.dot(&b.w2);
            dh1.zip_mut_with(&c.h1, |d, &h| {
                if h <= 0.0 {
                    *d = 0.0
                }
            });
            gb.w1 = dh1.t().dot(&c.z_mid);
            gb.b1 = dh1.sum_axis(Axis(0));
            let dz_mid = &dz + &dh1.dot(&b.w1);

            let mut dz_in = dz_mid.clone();
            for ((h, hc), gh) in b.heads.iter().zip(&c.heads).zip(&mut gb.heads) {
                gh.w_o = dz_mid.t().dot(&hc.mix);
                let dmix = dz_mid.dot(&h.w_o);
                let mut dk = Matrix::zeros(hc.k.raw_dim());
                let mut dq = Matrix::zeros(hc.q.raw_dim());
                let mut dv = Matrix::zeros(hc.v.raw_dim());
                let mut da = vec![0.0; n];
                for w in 0..windows {
                    let base = w * n;
                    for j in 0..n {
                        let dm = dmix.row(base + j);
                        let mut inner = 0.0;
                        for i in 0..n {
                            let a = hc.a[(base + i) * n + j];
                            dv.row_mut(base + i).scaled_add(a, &dm);
                            da[i] = dm.dot(&hc.v.row(base + i));
                            inner += a * da[i];
                        }
                        for i in 0..n {
                            let ds = hc.a[(base + i) * n + j] * (da[i] - inner);
                            if ds != 0.0 {
                                dk.row_mut(base + i).scaled_add(ds, &hc.q.row(base + j));
                                dq.row_mut(base + j).scaled_add(ds, &hc.k.row(base + i));
                            }
                        }
                    }
                }
                gh.w_k = dk.t().dot(&c.z_in);
                gh.w_q = dq.t().dot(&c.z_in);
                gh.w_v = dv.t().dot(&c.z_in);
                dz_in += &dk.dot(&h.w_k);
                dz_in += &dq.dot(&h.w_q);
                dz_in += &dv.dot(&h.w_v);
            }
            dz = dz_in;
        }
        g.e_in = dz.t().dot(&fwd.x);
        for w in 0..windows {
            g.p += &dz.slice(s![w * n..(w + 1) * n, ..]).t();
        }
        Ok((risk, g))
    }
}

/// Relative discrepancy `‖g − ĝ‖ / max(‖g‖, ‖ĝ‖)` between the analytic
/// gradient `g` and central differences `ĝ` (step `h`) of the risk computed by
/// the shared network evaluator.
pub fn gradient_check(model: &Model, xs: &[Matrix], ys: &[f64], h: f64) -> Result<f64> {
    let (_, g) = model.risk_and_grad(xs, ys)?;
    let analytic = g.to_flat();
    let base = model.to_flat();
    let reference_risk = |flat: &[f64]| -> Result<f64> {
        let mut m = model.clone();
        m.set_flat(flat)?;
        let (net, e) = m.to_network()?;
        let mut total = 0.0;
        for (x, y) in xs.iter().zip(ys) {
            total += (net.forward(x)?.row(0).dot(&e) - y).powi(2);
        }
        Ok(total / xs.len() as f64)
    };
    let mut numeric = Vec::with_capacity(base.len());
    let mut probe = base.clone();
    for i in 0..base.len() {
        probe[i] = base[i] + h;
        let up = reference_risk(&probe)?;
        probe[i] = base[i] - h;
        let down = reference_risk(&probe)?;
        probe[i] = base[i];
        numeric.push((up - down) / (2.0 * h));
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
    Ok(norm(&diff) / norm(&analytic).max(norm(&numeric)).max(1e-300))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn windows(count: usize, d_x: usize, n: usize, seed: u64) -> Vec<Matrix> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| Matrix::from_shape_fn((d_x, n), |_| rng.random::<f64>())).collect()
    }

    fn randomized(spec: ArchSpec, seed: u64) -> Model {
        let mut m = Model::init(spec, &InitConfig { scale: 0.7, jitter: 0.3, zero_readout: false }, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let flat: Vec<f64> = m.to_flat().iter().map(|v| v + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
        m.set_flat(&flat).unwrap();
        m
    }

    #[test]
    fn agrees_with_shared_evaluator() {
        let spec = ArchSpec::new(2, 1, 3, 5, 2, 2, 6, 2).unwrap();
        let m = randomized(spec, 1);
        let xs = windows(7, 2, 3, 2);
        let (net, e) = m.to_network().unwrap();
        for (x, y) in xs.iter().zip(m.predict(&xs).unwrap()) {
            let reference = net.forward(x).unwrap().row(0).dot(&e);
            assert!((reference - y).abs() < 1e-12, "{reference} vs {y}");
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        for seed in 0..4 {
            let spec = ArchSpec::new(1, 1, 2, 2, 1, 1, 2, 1).unwrap();
            let m = randomized(spec, seed);
            let xs = windows(6, 1, 2, seed + 10);
            let ys: Vec<f64> = (0..6).map(|i| (i as f64 * 0.37).sin()).collect();
            let err = gradient_check(&m, &xs, &ys, 1e-5).unwrap();
            assert!(err < 1e-5, "seed {seed}: {err}");
        }
        let spec = ArchSpec::new(2, 1, 3, 4, 2, 2, 3, 2).unwrap();
        let m = randomized(spec, 9);
        let xs = windows(4, 2, 3, 5);
        assert!(gradient_check(&m, &xs, &[0.1, -0.2, 0.3, 0.0], 1e-5).unwrap() < 1e-5);
    }

    #[test]
    fn zero_readout_starts_at_zero() {
        let spec = ArchSpec::new(1, 1, 2, 4, 1, 2, 3, 1).unwrap();
        let m = Model::init(spec, &InitConfig { zero_readout: true, ..Default::default() }, 0).unwrap();
        let xs = windows(5, 1, 2, 0);
        let (risk, g) = m.risk_and_grad(&xs, &[0.0; 5]).unwrap();
        assert_eq!(risk, 0.0);
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn flat_round_trip_preserves_order() {
        let spec = ArchSpec::new(1, 1, 2, 3, 1, 1, 2, 1).unwrap();
        let mut m = Model::init(spec, &InitConfig::default(), 3).unwrap();
        let flat: Vec<f64> = (0..m.to_flat().len()).map(|i| i as f64).collect();
        m.set_flat(&flat).unwrap();
        assert_eq!(m.to_flat(), flat);
        assert_eq!(m.e_in[[0, 0]], 0.0);
        assert_eq!(m.readout[1], flat.len() as f64 - 1.0);
        assert!(m.set_flat(&flat[1..]).is_err());
    }

    #[test]
    fn rejects_vector_outputs() {
        let spec = ArchSpec::new(1, 2, 2, 3, 1, 1, 2, 1).unwrap();
        assert!(Model::init(spec, &InitConfig::default(), 0).is_err());
    }
}
