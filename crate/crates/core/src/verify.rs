//! Oracle equivalence checks for the core building blocks, each reporting
//! the largest discrepancy over its cases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kst::{build_phi_tilde_fnn, cantor_decode, cantor_encode, phi_truncated, CantorCode, OmegaK};
use crate::nn::{build_mid_fnn, fnn_to_ff_stack, param_count, ArchSpec, Fnn, Matrix, TransformerNetwork, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub mid_triples: usize,
    pub stack_inputs: usize,
    /// Round trips run exhaustively for every shape with `d_x·n·K` at most this.
    pub cantor_max_digits: usize,
    pub phi_samples: usize,
    pub param_specs: usize,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            mid_triples: 100_000,
            stack_inputs: 1000,
            cantor_max_digits: 12,
            phi_samples: 10_000,
            param_specs: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckResult {
    fn new(name: &str, cases: usize, max_error: f64, tolerance: f64) -> Self {
        Self { name: name.into(), cases, max_error, tolerance, pass: max_error <= tolerance }
    }
}

/// Middle value of three by the ReLU network against sorting.
pub fn check_mid(triples: usize, seed: u64) -> Result<CheckResult> {
    let mid = build_mid_fnn();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..triples {
        let mut t: [f64; 3] = std::array::from_fn(|_| rng.random_range(-10.0..10.0));
        if i % 10 == 0 {
            t[2] = t[i % 2];
        }
        let got = mid.forward(&t)?[0];
        let mut sorted = t;
        sorted.sort_by(f64::total_cmp);
        worst = worst.max((got - sorted[1]).abs());
    }
    Ok(CheckResult::new("mid_vs_sort", triples, worst, 1e-9))
}

fn random_fnn(rng: &mut ChaCha8Rng, d_in: usize, widths: &[usize], d_out: usize) -> Result<Fnn> {
    let mut dims = vec![d_in];
    dims.extend_from_slice(widths);
    dims.push(d_out);
    let layers = dims
        .windows(2)
        .map(|w| {
            let m = Matrix::from_shape_fn((w[1], w[0]), |_| rng.sample::<f64, _>(StandardNormal));
            let b = Vector::from_shape_fn(w[1], |_| rng.sample::<f64, _>(StandardNormal));
            (m, b)
        })
        .collect();
    Fnn::new(layers)
}

/// Column-wise agreement of `fnn_to_ff_stack` with its source network.
pub fn check_ff_stack(inputs: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 3;
    let fnns = [
        random_fnn(&mut rng, 2, &[5, 4], 1)?,
        random_fnn(&mut rng, 3, &[4, 6], 2)?,
        random_fnn(&mut rng, 1, &[3, 3, 2], 3)?,
    ];
    let mut worst = 0.0f64;
    let mut cases = 0;
    for fnn in &fnns {
        let net = fnn_to_ff_stack(fnn, n)?.into_network()?;
        for _ in 0..inputs.div_ceil(n * fnns.len()) {
            let x = Matrix::from_shape_fn((fnn.input_dim(), n), |_| rng.random_range(-3.0..3.0));
            let y = net.forward(&x)?;
            for j in 0..n {
                let col: Vec<f64> = x.column(j).to_vec();
                let want = fnn.forward(&col)?;
                let err = (&y.column(j) - &want).iter().fold(0.0f64, |a, v| a.max(v.abs()));
                worst = worst.max(err);
                cases += 1;
            }
        }
    }
    Ok(CheckResult::new("ff_stack_vs_fnn", cases, worst, 1e-9))
}

/// Every dyadic matrix with `d_x·n·K ≤ max_digits` survives encode, decode
/// and re-reading the digits from the code value.
pub fn check_cantor(max_digits: usize) -> Result<CheckResult> {
    let mut cases = 0;
    let mut worst = 0.0f64;
    for d_x in 1..=max_digits {
        for n in 1..=max_digits / d_x {
            for k in 1..=max_digits / (d_x * n) {
                let d = d_x * n;
                for bits in 0u64..1 << (d * k) {
                    let x = Matrix::from_shape_fn((d_x, n), |(p, q)| {
                        let e = q * d_x + p;
                        (0..k).map(|j| ((bits >> (e * k + j)) & 1) as f64 * 0.5f64.powi(j as i32 + 1)).sum()
                    });
                    let code = cantor_encode(&x, k);
                    let back = cantor_decode(&code)?;
                    let reread = CantorCode::from_value(code.value, k, d_x, n)?;
                    let mut err = (&back - &x).iter().fold(0.0f64, |a, v| a.max(v.abs()));
                    if reread.digits != code.digits {
                        err = f64::INFINITY;
                    }
                    worst = worst.max(err);
                    cases += 1;
                }
            }
        }
    }
    Ok(CheckResult::new("cantor_round_trip", cases, worst, 0.0))
}

/// The ReLU digit extractor against the exact truncated Cantor map on `Ω_K`.
pub fn check_phi(samples: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for k in 1..=6 {
        for d in 1..=3 {
            let omega = OmegaK::new(k, OmegaK::default_margin(k))?;
            let fnn = build_phi_tilde_fnn(k, d, omega.margin)?;
            for _ in 0..samples.div_ceil(18) {
                let x: f64 = rng.random();
                if !omega.contains_scalar(x) {
                    continue;
                }
                worst = worst.max((fnn.forward(&[x])?[0] - phi_truncated(x, k, d)).abs());
                cases += 1;
            }
        }
    }
    Ok(CheckResult::new("phi_vs_truncated", cases, worst, 1e-9))
}

/// The closed-form parameter count against the weights stored in a fully
/// materialized random network.
pub fn check_param_count(specs: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..specs {
        let dim = rng.random_range(1..8);
        let spec = ArchSpec::new(
            rng.random_range(1..5),
            rng.random_range(1..4),
            rng.random_range(1..6),
            dim,
            rng.random_range(1..4),
            rng.random_range(1..=dim),
            rng.random_range(1..10),
            rng.random_range(1..4),
        )?;
        let net = TransformerNetwork::random(spec, 1.0, seed + i as u64)?;
        worst = worst.max((net.weight_count() as f64 - param_count(&spec) as f64).abs());
    }
    Ok(CheckResult::new("param_count_vs_enumerated", specs, worst, 0.0))
}

pub fn verify_core(cfg: &VerifyConfig) -> Result<Vec<CheckResult>> {
    Ok(vec![
        check_mid(cfg.mid_triples, cfg.seed)?,
        check_ff_stack(cfg.stack_inputs, cfg.seed)?,
        check_cantor(cfg.cantor_max_digits)?,
        check_phi(cfg.phi_samples, cfg.seed)?,
        check_param_count(cfg.param_specs, cfg.seed)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_runs_pass() {
        let cfg = VerifyConfig {
            mid_triples: 1000,
            stack_inputs: 30,
            cantor_max_digits: 6,
            phi_samples: 500,
            param_specs: 5,
            seed: 2,
        };
        for r in verify_core(&cfg).unwrap() {
            assert!(r.pass, "{r:?}");
            assert!(r.cases > 0);
        }
    }

    #[test]
    fn cantor_case_count() {
        // Shapes (d_x, n, K) with d_x·n·K ≤ 2: (1,1,1), (1,1,2), (1,2,1), (2,1,1).
        assert_eq!(check_cantor(2).unwrap().cases, 2 + 4 + 4 + 4);
    }
}
