//! Target maps `[0,1]^{d_x×n} → R^{d_x×n}` with declared smoothness, and a
//! small zoo of targets whose Hölder constants are known exactly.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

type Oracle = Arc<dyn Fn(&Matrix) -> Matrix + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Holder {
    pub gamma: f64,
    pub k_h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sobolev {
    pub p: f64,
    pub k_w: f64,
}

#[derive(Clone)]
pub struct TargetFunction {
    name: String,
    d_x: usize,
    n: usize,
    oracle: Oracle,
    pub holder: Option<Holder>,
    pub sobolev: Option<Sobolev>,
}

impl fmt::Debug for TargetFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TargetFunction")
            .field("name", &self.name)
            .field("d_x", &self.d_x)
            .field("n", &self.n)
            .field("holder", &self.holder)
            .field("sobolev", &self.sobolev)
            .finish()
    }
}

impl TargetFunction {
    pub fn new(
        name: impl Into<String>,
        d_x: usize,
        n: usize,
        oracle: impl Fn(&Matrix) -> Matrix + Send + Sync + 'static,
    ) -> Self {
        Self { name: name.into(), d_x, n, oracle: Arc::new(oracle), holder: None, sobolev: None }
    }

    pub fn with_holder(mut self, gamma: f64, k_h: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) || !(k_h > 0.0) {
            return Err(Error::InvalidParam(format!("Hölder parameters need γ ∈ (0,1], K_H > 0; got ({gamma}, {k_h})")));
        }
        self.holder = Some(Holder { gamma, k_h });
        Ok(self)
    }

    pub fn with_sobolev(mut self, p: f64, k_w: f64) -> Result<Self> {
        if !(p >= 1.0 && p.is_finite()) || !(k_w > 0.0) {
            return Err(Error::InvalidParam(format!("Sobolev parameters need p ∈ [1,∞), K_W > 0; got ({p}, {k_w})")));
        }
        self.sobolev = Some(Sobolev { p, k_w });
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn d_x(&self) -> usize {
        self.d_x
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn eval(&self, x: &Matrix) -> Matrix {
        (self.oracle)(x)
    }

    pub fn holder(&self) -> Result<Holder> {
        self.holder
            .ok_or_else(|| Error::InvalidParam(format!("target {} declares no Hölder smoothness", self.name)))
    }

    pub fn sobolev(&self) -> Result<Sobolev> {
        self.sobolev
            .ok_or_else(|| Error::InvalidParam(format!("target {} declares no Sobolev smoothness", self.name)))
    }

    /// Checks `|F_ij(X) − F_ij(Y)| ≤ K_H ‖X − Y‖_F^γ` and `|F_ij| ≤ K_H` on random
    /// pairs. Returns the first violation found.
    pub fn spot_check_holder(&self, pairs: usize, seed: u64) -> Result<Option<String>> {
        let h = self.holder()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = (self.d_x, self.n);
        for _ in 0..pairs {
            let x = Matrix::from_shape_fn(shape, |_| rng.random::<f64>());
            let y = if rng.random::<bool>() {
                let scale = 10f64.powf(-rng.random_range(0.0..4.0));
                (&x + &Matrix::from_shape_fn(shape, |_| scale * rng.random_range(-1.0..1.0))).mapv(|v| v.clamp(0.0, 1.0))
            } else {
                Matrix::from_shape_fn(shape, |_| rng.random::<f64>())
            };
            let (fx, fy) = (self.eval(&x), self.eval(&y));
            let dist = (&x - &y).mapv(|v| v * v).sum().sqrt();
            let allowed = h.k_h * dist.powf(h.gamma) * (1.0 + 1e-9) + 1e-12;
            if let Some(d) = (&fx - &fy).iter().map(|v| v.abs()).find(|&d| d > allowed) {
                return Ok(Some(format!("Hölder check failed: |ΔF| = {d:.3e} > {allowed:.3e}")));
            }
            if let Some(v) = fx.iter().find(|v| v.abs() > h.k_h * (1.0 + 1e-12)) {
                return Ok(Some(format!("sup bound failed: |F| = {v:.3e} > K_H = {}", h.k_h)));
            }
        }
        Ok(None)
    }
}

/// Built-in targets with exact smoothness declarations.
///
/// * `constant`: Lipschitz constant 0, so any γ works with `K_H = |c|`.
/// * `coordinate`: every entry equals `X[row, col]`; 1-Lipschitz in the
///   Frobenius norm and bounded by 1, so `(γ, K_H) = (1, 1)`.
/// * `sine_product`: `s·Π sin(π X_pq)` has gradient norm at most `π√(dn)`;
///   on a domain of diameter `√(dn)` a Λ-Lipschitz map is γ-Hölder with constant
///   `Λ·(√(dn))^{1−γ}`, and `s` rescales that constant to `K_H`.
/// * `distance_power`: `K_H (‖X − X0‖_F / √(dn))^γ` uses `|a^γ − b^γ| ≤ |a − b|^γ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    Constant { value: f64 },
    Coordinate { row: usize, col: usize },
    SineProduct { gamma: f64, k_h: f64 },
    DistancePower { gamma: f64, k_h: f64, point: Option<Vec<f64>> },
}

impl TargetSpec {
    pub fn build(&self, d_x: usize, n: usize) -> Result<TargetFunction> {
        let dn = (d_x * n) as f64;
        let shape = (d_x, n);
        match self.clone() {
            Self::Constant { value } => {
                let t = TargetFunction::new(format!("constant({value})"), d_x, n, move |_| Matrix::from_elem(shape, value));
                let k = value.abs().max(f64::MIN_POSITIVE);
                t.with_holder(1.0, k)?.with_sobolev(1.0, k)
            }
            Self::Coordinate { row, col } => {
                if row >= d_x || col >= n {
                    return Err(Error::InvalidParam(format!("coordinate ({row},{col}) outside {d_x}x{n}")));
                }
                let t = TargetFunction::new(format!("coordinate({row},{col})"), d_x, n, move |x| {
                    Matrix::from_elem(shape, x[[row, col]])
                });
                t.with_holder(1.0, 1.0)?.with_sobolev(1.0, 2.0)
            }
            Self::SineProduct { gamma, k_h } => {
                let lip = PI * dn.sqrt();
                let scale = 1.0 / (lip * dn.sqrt().powf(1.0 - gamma)).max(1.0);
                let t = TargetFunction::new(format!("sine_product(γ={gamma},K_H={k_h})"), d_x, n, move |x| {
                    let v = k_h * scale * x.iter().map(|&u| (PI * u).sin()).product::<f64>();
                    Matrix::from_elem(shape, v)
                });
                t.with_holder(gamma, k_h)?.with_sobolev(1.0, k_h * scale * (1.0 + lip))
            }
            Self::DistancePower { gamma, k_h, point } => {
                let point = point.unwrap_or_else(|| vec![0.5; d_x * n]);
                if point.len() != d_x * n || point.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::InvalidParam("distance_power point must have d_x·n entries in [0,1]".into()));
                }
                let x0 = Matrix::from_shape_vec(shape, point).expect("length checked");
                let t = TargetFunction::new(format!("distance_power(γ={gamma},K_H={k_h})"), d_x, n, move |x| {
                    let dist = (x - &x0).mapv(|v| v * v).sum().sqrt() / dn.sqrt();
                    Matrix::from_elem(shape, k_h * dist.powf(gamma))
                })
                .with_holder(gamma, k_h)?;
                if gamma == 1.0 {
                    t.with_sobolev(1.0, k_h * (1.0 + 1.0 / dn.sqrt()))
                } else {
                    Ok(t)
                }
            }
        }
    }
}
