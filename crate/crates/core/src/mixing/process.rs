//! Stationary processes on `[0,1]^{d_x}` with known mixing behaviour.
//!
//! Finite-state chains are observed through a dither: state `s` of a chain
//! with `G` observable levels maps to `(s + U)/G`, `U ~ U(0,1)` drawn fresh at
//! every step, so the marginal has a density while the mixing coefficients
//! stay those of the underlying chain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zeta};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Observable levels of the renewal chain; residual lives above this share the top level.
pub const RENEWAL_LEVELS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProcessKind {
    /// Independent two-state chains per coordinate with `P(0→1) = a`, `P(1→0) = b`.
    GeometricMarkov { a: Vec<f64>, b: Vec<f64> },
    /// Independent stationary residual-life chains with holding times
    /// `⌊Y⌋`, `Y ~ Pareto(r + 1)`, so that `P(T ≥ j) = j^{−(r+1)}`.
    AlgebraicRenewal { r: f64 },
    /// Uniform draws on `[0,1]^{d_x}`.
    Iid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingProcess {
    pub kind: ProcessKind,
    pub d_x: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Exact,
    /// Sum of per-coordinate coefficients, valid for independent coordinates.
    UnionUpper,
    /// `β(k)` is at least this value; no explicit upper constant is claimed.
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MixingBound {
    pub value: f64,
    pub kind: BoundKind,
}

fn two_state_beta(a: f64, b: f64, k: usize) -> f64 {
    let (p0, p1) = (b / (a + b), a / (a + b));
    2.0 * p0 * p1 * (1.0 - a - b).abs().powi(k as i32)
}

fn zeta_tail(alpha: f64, from: usize) -> f64 {
    // Σ_{j ≥ from} j^{−α} with an Euler–Maclaurin tail after 10⁴ explicit terms.
    let stop = from.max(1) + 10_000;
    let head: f64 = (from.max(1)..stop).map(|j| (j as f64).powf(-alpha)).sum();
    let s = stop as f64;
    head + s.powf(1.0 - alpha) / (alpha - 1.0) + 0.5 * s.powf(-alpha) + alpha / 12.0 * s.powf(-alpha - 1.0)
}

impl MixingProcess {
    pub fn new(kind: ProcessKind, d_x: usize) -> Result<Self> {
        let p = Self { kind, d_x };
        p.validate()?;
        Ok(p)
    }

    pub fn iid(d_x: usize) -> Result<Self> {
        Self::new(ProcessKind::Iid, d_x)
    }

    /// The same two-state chain on every coordinate.
    pub fn geometric(a: f64, b: f64, d_x: usize) -> Result<Self> {
        Self::new(ProcessKind::GeometricMarkov { a: vec![a; d_x], b: vec![b; d_x] }, d_x)
    }

    pub fn algebraic(r: f64, d_x: usize) -> Result<Self> {
        Self::new(ProcessKind::AlgebraicRenewal { r }, d_x)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_x == 0 {
            return Err(Error::InvalidParam("process needs d_x ≥ 1".into()));
        }
        match &self.kind {
            ProcessKind::GeometricMarkov { a, b } => {
                if a.len() != self.d_x || b.len() != self.d_x {
                    return Err(Error::InvalidParam(format!(
                        "chain parameters must have d_x = {} entries",
                        self.d_x
                    )));
                }
                for (&a, &b) in a.iter().zip(b) {
                    if !(a > 0.0 && a <= 1.0 && b > 0.0 && b <= 1.0) || a + b >= 2.0 {
                        return Err(Error::InvalidParam(format!(
                            "two-state chain needs a, b ∈ (0,1] and a + b < 2, got ({a}, {b})"
                        )));
                    }
                }
            }
            ProcessKind::AlgebraicRenewal { r } => {
                if !(*r > 0.0 && r.is_finite()) {
                    return Err(Error::InvalidParam(format!("renewal exponent must be positive, got {r}")));
                }
            }
            ProcessKind::Iid => {}
        }
        Ok(())
    }

    /// Known value or bound on `β(k)`, `k ≥ 1`.
    ///
    /// For the renewal chain a start with residual life `R₀ > k` is still
    /// deterministic after `k` steps, so `β(k) ≥ (1 − π(1))·P_π(R₀ > k)`,
    /// which decays like `k^{−r}`.
    pub fn beta(&self, k: usize) -> Result<MixingBound> {
        if k == 0 {
            return Err(Error::InvalidParam("β(k) is defined for k ≥ 1".into()));
        }
        Ok(match &self.kind {
            ProcessKind::Iid => MixingBound { value: 0.0, kind: BoundKind::Exact },
            ProcessKind::GeometricMarkov { a, b } => {
                let value = a.iter().zip(b).map(|(&a, &b)| two_state_beta(a, b, k)).sum::<f64>().min(1.0);
                let kind = if self.d_x == 1 { BoundKind::Exact } else { BoundKind::UnionUpper };
                MixingBound { value, kind }
            }
            ProcessKind::AlgebraicRenewal { r } => {
                let alpha = r + 1.0;
                let z = zeta_tail(alpha, 1);
                let tail = zeta_tail(alpha, k + 1) / z;
                MixingBound { value: (1.0 - 1.0 / z) * tail, kind: BoundKind::Lower }
            }
        })
    }

    /// Stationary law of the observed marginal is uniform exactly when every
    /// two-state chain has `a = b`, or for the iid process.
    pub fn stationary_probabilities(&self) -> Option<Vec<(f64, f64)>> {
        match &self.kind {
            ProcessKind::GeometricMarkov { a, b } => {
                Some(a.iter().zip(b).map(|(&a, &b)| (b / (a + b), a / (a + b))).collect())
            }
            _ => None,
        }
    }

    /// A stationary path of length `m`, one column per time step.
    pub fn generate(&self, m: usize, seed: u64) -> Result<Matrix> {
        if m == 0 {
            return Err(Error::InvalidParam("process length must be ≥ 1".into()));
        }
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(self.generate_with(m, &mut rng))
    }

    pub(crate) fn generate_with(&self, m: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let d = self.d_x;
        let mut out = Matrix::zeros((d, m));
        match &self.kind {
            ProcessKind::Iid => out.mapv_inplace(|_| rng.random::<f64>()),
            ProcessKind::GeometricMarkov { a, b } => {
                let mut state: Vec<bool> =
                    (0..d).map(|i| rng.random::<f64>() < a[i] / (a[i] + b[i])).collect();
                for t in 0..m {
                    for i in 0..d {
                        if t > 0 {
                            let flip = if state[i] { b[i] } else { a[i] };
                            if rng.random::<f64>() < flip {
                                state[i] = !state[i];
                            }
                        }
                        out[[i, t]] = (state[i] as u8 as f64 + rng.random::<f64>()) / 2.0;
                    }
                }
            }
            ProcessKind::AlgebraicRenewal { r } => {
                let alpha = r + 1.0;
                let zeta = Zeta::new(alpha).expect("alpha > 1");
                let mut residual: Vec<f64> = (0..d).map(|_| zeta.sample(rng)).collect();
                for t in 0..m {
                    for i in 0..d {
                        if t > 0 {
                            residual[i] = if residual[i] > 1.0 {
                                residual[i] - 1.0
                            } else {
                                // ⌊Y⌋ with Y = U^{−1/α}.
                                (1.0 - rng.random::<f64>()).powf(-1.0 / alpha).floor()
                            };
                        }
                        let level = residual[i].min(RENEWAL_LEVELS as f64) - 1.0;
                        out[[i, t]] = (level + rng.random::<f64>()) / RENEWAL_LEVELS as f64;
                    }
                }
            }
        }
        out
    }
}

/// Plug-in estimate of `β(k) = E_{S₀} TV(P^k(S₀,·), π)` for finite-state
/// processes: `½ Σ_{x,y} |p̂(x,y) − p̂(x) p̂'(y)|` over `n_mc` independent
/// stationary pairs `(S₀, S_k)` of the joint chain state.
pub fn empirical_beta(process: &MixingProcess, k: usize, n_mc: usize, seed: u64) -> Result<f64> {
    process.validate()?;
    let (a, b) = match &process.kind {
        ProcessKind::Iid => return Ok(0.0),
        ProcessKind::AlgebraicRenewal { .. } => {
            return Err(Error::Unsupported("empirical β needs a finite-state process".into()))
        }
        ProcessKind::GeometricMarkov { a, b } => (a, b),
    };
    if process.d_x > 16 {
        return Err(Error::Resource(format!("2^{} joint states", process.d_x)));
    }
    if n_mc == 0 {
        return Err(Error::InvalidParam("n_mc must be ≥ 1".into()));
    }
    let states = 1usize << process.d_x;
    let mut joint = vec![0u64; states * states];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_mc {
        let (mut s0, mut sk) = (0usize, 0usize);
        for i in 0..process.d_x {
            let mut s = rng.random::<f64>() < a[i] / (a[i] + b[i]);
            s0 |= (s as usize) << i;
            for _ in 0..k {
                if rng.random::<f64>() < if s { b[i] } else { a[i] } {
                    s = !s;
                }
            }
            sk |= (s as usize) << i;
        }
        joint[s0 * states + sk] += 1;
    }
    let n = n_mc as f64;
    let row: Vec<f64> = (0..states).map(|x| joint[x * states..(x + 1) * states].iter().sum::<u64>() as f64 / n).collect();
    let col: Vec<f64> = (0..states).map(|y| (0..states).map(|x| joint[x * states + y]).sum::<u64>() as f64 / n).collect();
    let mut tv = 0.0;
    for x in 0..states {
        for y in 0..states {
            tv += (joint[x * states + y] as f64 / n - row[x] * col[y]).abs();
        }
    }
    Ok(tv / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn two_state_closed_form() {
        let p = MixingProcess::geometric(0.25, 0.25, 1).unwrap();
        assert!((p.beta(1).unwrap().value - 0.25).abs() < 1e-15);
        assert!((p.beta(2).unwrap().value - 0.125).abs() < 1e-15);
        assert_eq!(p.beta(1).unwrap().kind, BoundKind::Exact);
        assert_eq!(MixingProcess::geometric(0.25, 0.25, 3).unwrap().beta(1).unwrap().kind, BoundKind::UnionUpper);
    }

    #[test]
    fn iid_is_exactly_zero() {
        let p = MixingProcess::iid(2).unwrap();
        for k in 1..10 {
            assert_eq!(p.beta(k).unwrap().value, 0.0);
        }
        assert_eq!(empirical_beta(&p, 3, 10, 0).unwrap(), 0.0);
    }

    #[test]
    fn invalid_chains_rejected() {
        assert!(MixingProcess::geometric(0.0, 0.5, 1).is_err());
        assert!(MixingProcess::geometric(1.0, 1.0, 1).is_err());
        assert!(MixingProcess::algebraic(-1.0, 1).is_err());
        assert!(MixingProcess::new(ProcessKind::GeometricMarkov { a: vec![0.2], b: vec![0.2] }, 2).is_err());
        assert!(empirical_beta(&MixingProcess::algebraic(1.0, 1).unwrap(), 1, 10, 0).is_err());
    }

    #[test]
    fn empirical_matches_closed_form() {
        let p = MixingProcess::geometric(0.25, 0.25, 1).unwrap();
        let e = empirical_beta(&p, 1, 200_000, 3).unwrap();
        assert!((e - 0.25).abs() < 5e-3, "{e}");
        assert!(empirical_beta(&p, 40, 200_000, 4).unwrap() < 5e-3);
    }

    #[test]
    fn chain_marginal_is_stationary() {
        // Chi-square on the hidden state at several times, 10⁵ draws.
        let p = MixingProcess::geometric(0.1, 0.3, 1).unwrap();
        let path = p.generate(100_000, 9).unwrap();
        let ones = path.iter().filter(|&&x| x >= 0.5).count() as f64;
        let n = path.len() as f64;
        let (p0, p1) = (0.75, 0.25);
        // Effective sample size shrinks by the autocorrelation (1 + λ)/(1 − λ).
        let lambda: f64 = 1.0 - 0.1 - 0.3;
        let n_eff = n * (1.0 - lambda) / (1.0 + lambda);
        let stat = n_eff * ((ones / n - p1).powi(2) / p1 + ((n - ones) / n - p0).powi(2) / p0);
        assert!(stat < ChiSquared::new(1.0).unwrap().inverse_cdf(0.99), "{stat}");
    }

    #[test]
    fn renewal_lower_bound_decays_algebraically() {
        let p = MixingProcess::algebraic(1.0, 1).unwrap();
        let b10 = p.beta(10).unwrap().value;
        let b100 = p.beta(100).unwrap().value;
        assert!(b10 > b100 && b100 > 0.0);
        // Tail of Σ j^{-2} ~ 1/k, so the ratio is close to 10.
        assert!((b10 / b100 - 10.0).abs() < 1.0, "{}", b10 / b100);
    }

    #[test]
    fn renewal_start_is_stationary() {
        // Mean of the top-level indicator at t = 0 and t = 50 agree.
        let p = MixingProcess::algebraic(2.0, 1).unwrap();
        let mut first = 0.0;
        let mut later = 0.0;
        let runs = 20_000;
        for s in 0..runs {
            let path = p.generate(51, s).unwrap();
            first += (path[[0, 0]] < 1.0 / 8.0) as u8 as f64;
            later += (path[[0, 50]] < 1.0 / 8.0) as u8 as f64;
        }
        let expected = 1.0 / zeta_tail(3.0, 1);
        let se = (expected * (1.0 - expected) / runs as f64).sqrt();
        assert!((first / runs as f64 - expected).abs() < 4.0 * se);
        assert!((later / runs as f64 - expected).abs() < 4.0 * se);
    }

    #[test]
    fn zeta_tail_matches_known_value() {
        assert!((zeta_tail(2.0, 1) - std::f64::consts::PI.powi(2) / 6.0).abs() < 1e-12);
    }

    #[test]
    fn paths_live_in_unit_cube() {
        for p in [
            MixingProcess::iid(2).unwrap(),
            MixingProcess::geometric(0.3, 0.6, 2).unwrap(),
            MixingProcess::algebraic(1.5, 2).unwrap(),
        ] {
            let x = p.generate(500, 1).unwrap();
            assert_eq!(x.dim(), (2, 500));
            assert!(x.iter().all(|v| (0.0..1.0).contains(v)));
        }
    }
}
