//! Region-aware error estimation between an oracle and a network.
//!
//! Monte Carlo estimates draw sample `i` from its own ChaCha stream `i`, so
//! results do not depend on thread scheduling, and sums use pairwise
//! reduction over the per-sample values in index order.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::scalar_in_trifling;
use crate::kst::OmegaK;
use crate::nn::Matrix;

/// Cap on the number of points of a dense evaluation grid.
pub const SUP_GRID_CAP: usize = 1 << 24;
const MAX_DRAWS_PER_SAMPLE: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegionFilter {
    Full,
    ExcludeTrifling { k: usize, delta: f64 },
    OmegaK { k: usize, margin: f64 },
}

impl RegionFilter {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Full => Ok(()),
            Self::ExcludeTrifling { k, delta } => crate::grid::trifling_measure_bound(k, delta, 1, 1).map(|_| ()),
            Self::OmegaK { k, margin } => OmegaK::new(k, margin).map(|_| ()),
        }
    }

    pub fn accepts(&self, x: &Matrix) -> bool {
        match *self {
            Self::Full => true,
            Self::ExcludeTrifling { k, delta } => !x.iter().any(|&v| scalar_in_trifling(v, k, delta)),
            Self::OmegaK { k, margin } => OmegaK { k, margin }.contains(x),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Full => "full".into(),
            Self::ExcludeTrifling { k, delta } => format!("excl-trifling(K={k};delta={delta:e})"),
            Self::OmegaK { k, margin } => format!("omega_K(K={k};margin={margin:e})"),
        }
    }
}

/// Pointwise norm of the error matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointNorm {
    Frobenius,
    MaxEntry,
}

impl PointNorm {
    pub fn of(&self, m: &Matrix) -> f64 {
        match self {
            Self::Frobenius => m.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Self::MaxEntry => m.iter().fold(0.0, |a: f64, v| a.max(v.abs())),
        }
    }
}

mod order {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(p: &f64, s: S) -> Result<S::Ok, S::Error> {
        if p.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*p)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Order {
            Num(f64),
            Text(String),
        }
        match Order::deserialize(d)? {
            Order::Num(v) => Ok(v),
            Order::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Order::Text(t) => Err(serde::de::Error::custom(format!("bad norm order {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEstimate {
    /// Norm order; `inf` for sup estimates.
    #[serde(with = "order")]
    pub p: f64,
    pub region: String,
    pub norm: PointNorm,
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
    pub seed: u64,
    /// For grid sup estimates of Hölder targets: `K_H (h√(dn)/2)^γ`, the most
    /// the target can move between a point and its nearest grid node.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lipschitz_slack: Option<f64>,
}

impl ErrorEstimate {
    pub fn with_holder_slack(mut self, gamma: f64, k_h: f64, resolution: usize, dn: usize) -> Self {
        let h = if resolution > 1 { 1.0 / (resolution - 1) as f64 } else { 1.0 };
        self.lipschitz_slack = Some(k_h * (h * (dn as f64).sqrt() / 2.0).powf(gamma));
        self
    }
}

/// Reproducible pairwise summation.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 32 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws from stream `stream` until the filter accepts; returns the sample and
/// the number of draws used.
fn draw(filter: &RegionFilter, shape: (usize, usize), seed: u64, stream: u64) -> Result<(Matrix, usize)> {
    let mut rng = stream_rng(seed, stream);
    for tries in 1..=MAX_DRAWS_PER_SAMPLE {
        let x = Matrix::from_shape_fn(shape, |_| rng.random::<f64>());
        if filter.accepts(&x) {
            return Ok((x, tries));
        }
    }
    Err(Error::DegenerateFilter { accepted: 0, drawn: MAX_DRAWS_PER_SAMPLE })
}

/// One uniform sample from the accepted region.
pub fn sample_uniform_filtered(filter: &RegionFilter, d_x: usize, n: usize, seed: u64) -> Result<Matrix> {
    filter.validate()?;
    draw(filter, (d_x, n), seed, 0).map(|(x, _)| x)
}

/// `samples` filtered draws (sample `i` from stream `i`) and the total number
/// of raw draws.
pub fn sample_batch(filter: &RegionFilter, d_x: usize, n: usize, samples: usize, seed: u64) -> Result<(Vec<Matrix>, usize)> {
    filter.validate()?;
    let drawn: Vec<(Matrix, usize)> = (0..samples as u64)
        .into_par_iter()
        .map(|i| draw(filter, (d_x, n), seed, i))
        .collect::<Result<_>>()?;
    let total = drawn.iter().map(|(_, t)| t).sum::<usize>();
    if samples > 0 && (samples as f64) < 0.01 * total as f64 {
        return Err(Error::DegenerateFilter { accepted: samples, drawn: total });
    }
    Ok((drawn.into_iter().map(|(x, _)| x).collect(), total))
}

fn pointwise_errors<F, G>(f: &F, g: &G, xs: &[Matrix], norm: PointNorm) -> Result<Vec<f64>>
where
    F: Fn(&Matrix) -> Result<Matrix> + Sync,
    G: Fn(&Matrix) -> Result<Matrix> + Sync,
{
    xs.par_iter()
        .map(|x| {
            let (a, b) = (f(x)?, g(x)?);
            if a.dim() != b.dim() {
                return Err(Error::Shape("compared maps disagree on output shape".into()));
            }
            Ok(norm.of(&(a - b)))
        })
        .collect()
}

/// Monte Carlo estimate of `(E ‖f − g‖^p)^{1/p}` over the filtered region, with
/// delta-method standard error.
#[allow(clippy::too_many_arguments)]
pub fn lp_error_mc<F, G>(
    f: F,
    g: G,
    p: f64,
    filter: &RegionFilter,
    shape: (usize, usize),
    samples: usize,
    seed: u64,
    norm: PointNorm,
) -> Result<ErrorEstimate>
where
    F: Fn(&Matrix) -> Result<Matrix> + Sync,
    G: Fn(&Matrix) -> Result<Matrix> + Sync,
{
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::InvalidParam(format!("Monte Carlo order must be finite and >= 1, got {p}")));
    }
    if samples < 100 {
        return Err(Error::InvalidParam(format!("need at least 100 samples, got {samples}")));
    }
    let (xs, _) = sample_batch(filter, shape.0, shape.1, samples, seed)?;
    let powered: Vec<f64> = pointwise_errors(&f, &g, &xs, norm)?.into_iter().map(|e| e.powf(p)).collect();
    let n = samples as f64;
    let mean = pairwise_sum(&powered) / n;
    let centered: Vec<f64> = powered.iter().map(|v| (v - mean).powi(2)).collect();
    let var = pairwise_sum(&centered) / (n - 1.0);
    let value = mean.powf(1.0 / p);
    let std_error = if mean > 0.0 { value / (p * mean) * (var / n).sqrt() } else { 0.0 };
    Ok(ErrorEstimate {
        p,
        region: filter.label(),
        norm,
        value,
        std_error,
        samples,
        seed,
        lipschitz_slack: None,
    })
}

/// Largest pointwise error over `samples` filtered draws.
#[allow(clippy::too_many_arguments)]
pub fn sup_error_mc<F, G>(
    f: F,
    g: G,
    filter: &RegionFilter,
    shape: (usize, usize),
    samples: usize,
    seed: u64,
    norm: PointNorm,
) -> Result<ErrorEstimate>
where
    F: Fn(&Matrix) -> Result<Matrix> + Sync,
    G: Fn(&Matrix) -> Result<Matrix> + Sync,
{
    let (xs, _) = sample_batch(filter, shape.0, shape.1, samples, seed)?;
    let value = pointwise_errors(&f, &g, &xs, norm)?.into_iter().fold(0.0, f64::max);
    Ok(ErrorEstimate {
        p: f64::INFINITY,
        region: filter.label(),
        norm,
        value,
        std_error: 0.0,
        samples,
        seed,
        lipschitz_slack: None,
    })
}

/// Grid coordinate `i` of a per-axis resolution; endpoints included.
fn axis_value(i: usize, resolution: usize) -> f64 {
    if resolution == 1 {
        0.5
    } else {
        i as f64 / (resolution - 1) as f64
    }
}

/// Maximum pointwise error over the uniform grid with `resolution` points per
/// axis (endpoints included), skipping points the filter rejects.
pub fn sup_error_grid<F, G>(
    f: F,
    g: G,
    resolution: usize,
    filter: &RegionFilter,
    shape: (usize, usize),
    norm: PointNorm,
) -> Result<ErrorEstimate>
where
    F: Fn(&Matrix) -> Result<Matrix> + Sync,
    G: Fn(&Matrix) -> Result<Matrix> + Sync,
{
    filter.validate()?;
    if resolution == 0 {
        return Err(Error::InvalidParam("grid resolution must be >= 1".into()));
    }
    let entries = shape.0 * shape.1;
    let total = crate::grid::checked_pow(resolution, entries, SUP_GRID_CAP, "sup grid")?;
    let (value, counted) = (0..total)
        .into_par_iter()
        .map(|idx| {
            let mut x = Matrix::zeros(shape);
            let mut rest = idx;
            for e in (0..entries).rev() {
                x[[e / shape.1, e % shape.1]] = axis_value(rest % resolution, resolution);
                rest /= resolution;
            }
            if !filter.accepts(&x) {
                return Ok::<_, Error>((0.0, 0usize));
            }
            let (a, b) = (f(&x)?, g(&x)?);
            Ok((norm.of(&(a - b)), 1usize))
        })
        .try_reduce(|| (0.0, 0), |a, b| Ok((a.0.max(b.0), a.1 + b.1)))?;
    Ok(ErrorEstimate {
        p: f64::INFINITY,
        region: filter.label(),
        norm,
        value,
        std_error: 0.0,
        samples: counted,
        seed: 0,
        lipschitz_slack: None,
    })
}

/// Writes estimates with columns `p, region, value, std_error, samples, seed`.
pub fn write_estimates_csv<W: Write>(out: W, estimates: &[ErrorEstimate]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["p", "region", "value", "std_error", "samples", "seed"])?;
    for e in estimates {
        let p = if e.p.is_infinite() { "inf".to_string() } else { e.p.to_string() };
        w.write_record([
            p,
            e.region.clone(),
            format!("{:.17e}", e.value),
            format!("{:.17e}", e.std_error),
            e.samples.to_string(),
            e.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
