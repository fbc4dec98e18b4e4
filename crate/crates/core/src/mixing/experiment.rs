//! Sliding-window datasets, truncated excess risk, width budgets and the
//! sweep over sample sizes, seeds and processes.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::InitConfig;
use super::process::{MixingProcess, ProcessKind};
use super::train::{train_erm, TrainConfig};
use crate::error::{Error, Result};
use crate::metrics::pairwise_sum;
use crate::nn::{ArchSpec, Matrix};
use crate::target::{TargetFunction, TargetSpec};

/// Windows `(x_{t−n+1}, …, x_t)` for `t = n, …, m` with noisy responses.
#[derive(Debug, Clone)]
pub struct RegressionDataset {
    pub windows: Vec<Matrix>,
    pub targets: Vec<f64>,
    /// Noise-free responses `f*(window)`.
    pub clean: Vec<f64>,
    pub m: usize,
    pub n: usize,
    pub sigma: f64,
}

/// The scalar response of a window: the target's output at the last token.
fn response(target: &TargetFunction, window: &Matrix) -> f64 {
    target.eval(window)[[0, window.ncols() - 1]]
}

fn window_at(path: &Matrix, end: usize, n: usize) -> Matrix {
    path.slice(ndarray::s![.., end + 1 - n..=end]).to_owned()
}

pub fn make_dataset(
    process: &MixingProcess,
    m: usize,
    n: usize,
    target: &TargetFunction,
    sigma: f64,
    seed: u64,
) -> Result<RegressionDataset> {
    if n == 0 || m < n {
        return Err(Error::InvalidParam(format!("need m ≥ n ≥ 1, got m={m}, n={n}")));
    }
    if target.d_x() != process.d_x || target.n() != n {
        return Err(Error::Shape("target shape does not match process and window".into()));
    }
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParam(format!("noise σ: {e}")))?;
    let path = process.generate(m, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let windows: Vec<Matrix> = (n - 1..m).map(|t| window_at(&path, t, n)).collect();
    let clean: Vec<f64> = windows.iter().map(|w| response(target, w)).collect();
    let targets = clean.iter().map(|c| c + noise.sample(&mut rng)).collect();
    Ok(RegressionDataset { windows, targets, clean, m, n, sigma })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Monte Carlo `E[(C_B f̂ − f*)²]` over independent windows, each drawn
/// from a fresh stationary start of the process; `C_B` clamps to `[−B, B]`.
pub fn excess_risk(
    predict: &dyn Fn(&[Matrix]) -> Result<Vec<f64>>,
    truncation: f64,
    target: &TargetFunction,
    process: &MixingProcess,
    samples: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    if samples < 1000 {
        return Err(Error::InvalidParam(format!("excess risk needs ≥ 1000 samples, got {samples}")));
    }
    if !(truncation > 0.0) {
        return Err(Error::InvalidParam("truncation level must be positive".into()));
    }
    let n = target.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let windows: Vec<Matrix> = (0..samples).map(|_| process.generate_with(n, &mut rng)).collect();
    let preds = predict(&windows)?;
    if preds.len() != samples {
        return Err(Error::Shape("predictor returned the wrong number of values".into()));
    }
    let sq: Vec<f64> = windows
        .iter()
        .zip(&preds)
        .map(|(w, &p)| (p.clamp(-truncation, truncation) - response(target, w)).powi(2))
        .collect();
    let mean = pairwise_sum(&sq) / samples as f64;
    let var = pairwise_sum(&sq.iter().map(|v| (v - mean).powi(2)).collect::<Vec<_>>()) / (samples - 1) as f64;
    Ok(RiskEstimate { value: mean, std_error: (var / samples as f64).sqrt(), samples })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Regime {
    Iid,
    /// `β(k) ≤ β₀ exp(−β₁ k^r)`.
    Geometric { r: f64 },
    /// `β(k) ≤ β₀ k^{−r}`.
    Algebraic { r: f64 },
}

impl Regime {
    pub fn of(kind: &ProcessKind) -> Self {
        match kind {
            ProcessKind::Iid => Regime::Iid,
            ProcessKind::GeometricMarkov { .. } => Regime::Geometric { r: 1.0 },
            ProcessKind::AlgebraicRenewal { r } => Regime::Algebraic { r: *r },
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Regime::Geometric { r } | Regime::Algebraic { r } if !(*r > 0.0 && r.is_finite()) => {
                Err(Error::InvalidParam(format!("regime exponent must be positive, got {r}")))
            }
            _ => Ok(()),
        }
    }

    /// Exponent `a` in the excess-risk rate `m^{a}` (up to logarithms).
    pub fn predicted_exponent(&self, gamma: f64, dn: f64) -> f64 {
        match *self {
            Regime::Iid | Regime::Geometric { .. } => -gamma / (gamma + dn),
            Regime::Algebraic { r } => -r * gamma / ((r + 2.0) * gamma + (r + 1.0) * dn),
        }
    }
}

/// Hypothesis class and tuning sizes for sample size `m`, all constants one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Budget {
    pub arch: ArchSpec,
    /// Block length of the independent-block argument.
    pub k_m: usize,
    /// Truncation level.
    pub b_m: f64,
}

/// `W_m = ⌈m^{dn/(2γ+2dn)}⌉` (algebraic: `⌈m^{r dn/(2(r+2)γ+2(r+1)dn)}⌉`),
/// `B_m = ⌈ln m⌉`, `k_m = ⌈(ln m)^{1/r}⌉` (algebraic:
/// `⌈m^{(2γ+dn)/((r+2)γ+(r+1)dn)}⌉`, iid: 1). `D = d_x + n + 1`, `H = 1`,
/// `S = 2`, `L = 1`.
pub fn rate_budget(m: f64, gamma: f64, d_x: usize, n: usize, regime: Regime) -> Result<Budget> {
    regime.validate()?;
    if !(m > 1.0 && m.is_finite()) || !(gamma > 0.0 && gamma <= 1.0) || d_x == 0 || n == 0 {
        return Err(Error::InvalidParam(format!("invalid budget inputs m={m}, γ={gamma}, d_x={d_x}, n={n}")));
    }
    let dn = (d_x * n) as f64;
    // Values within 1e-9 of an integer are treated as that integer before ceil.
    let ceil = |v: f64| (v - 1e-9).ceil().max(1.0);
    let (width, k_m) = match regime {
        Regime::Iid => (ceil(m.powf(dn / (2.0 * gamma + 2.0 * dn))), 1.0),
        Regime::Geometric { r } => (ceil(m.powf(dn / (2.0 * gamma + 2.0 * dn))), ceil(m.ln().powf(1.0 / r))),
        Regime::Algebraic { r } => (
            ceil(m.powf(r * dn / (2.0 * (r + 2.0) * gamma + 2.0 * (r + 1.0) * dn))),
            ceil(m.powf((2.0 * gamma + dn) / ((r + 2.0) * gamma + (r + 1.0) * dn))),
        ),
    };
    let dim = d_x + n + 1;
    let arch = ArchSpec::new(d_x, 1, n, dim, 1, 2.min(dim), width as usize, 1)?;
    Ok(Budget { arch, k_m: k_m as usize, b_m: ceil(m.ln()) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub slope_std_error: f64,
}

/// Least squares of `ln risk` on `ln m`.
pub fn rate_fit(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::InvalidParam(format!("rate fit needs ≥ 3 points, got {}", points.len())));
    }
    if points.iter().any(|&(m, r)| !(m > 0.0) || !(r > 0.0)) {
        return Err(Error::InvalidParam("rate fit needs positive sample sizes and risks".into()));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParam("rate fit needs distinct sample sizes".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    let slope_std_error = if points.len() > 2 { (sse / (k - 2.0) / sxx).sqrt() } else { f64::NAN };
    Ok(RateFit { slope, intercept, r2, slope_std_error })
}

fn default_sigma() -> f64 {
    0.1
}

fn default_risk_samples() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub processes: Vec<ProcessKind>,
    pub target: TargetSpec,
    pub d_x: usize,
    pub n: usize,
    pub ms: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    pub steps: usize,
    pub lr: f64,
    pub lr_final: f64,
    #[serde(default)]
    pub init: InitConfig,
    #[serde(default = "default_risk_samples")]
    pub risk_samples: usize,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.processes.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidParam("sweep needs at least one process and one seed".into()));
        }
        let mut ms = self.ms.clone();
        ms.sort_unstable();
        ms.dedup();
        if ms.len() < 3 || ms.len() != self.ms.len() {
            return Err(Error::InvalidParam("sweep needs ≥ 3 distinct sample sizes".into()));
        }
        if ms[0] < self.n.max(2) {
            return Err(Error::InvalidParam("every m must be at least n and at least 2".into()));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::InvalidParam("noise σ must be nonnegative".into()));
        }
        for p in &self.processes {
            MixingProcess::new(p.clone(), self.d_x)?;
        }
        Ok(())
    }
}

/// One training run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskReport {
    pub process: String,
    pub m: usize,
    pub seed: u64,
    pub train_risk: f64,
    pub excess_risk: f64,
    pub std_error: f64,
    pub width: usize,
    pub truncation: f64,
    pub best_step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub process: String,
    /// `(m, median excess risk over seeds)`, increasing in `m`.
    pub medians: Vec<(usize, f64)>,
    pub fit: RateFit,
    pub predicted_exponent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepOutcome {
    pub reports: Vec<RiskReport>,
    pub summaries: Vec<SweepSummary>,
}

fn label(kind: &ProcessKind) -> String {
    match kind {
        ProcessKind::Iid => "iid".into(),
        ProcessKind::GeometricMarkov { .. } => "geometric".into(),
        ProcessKind::AlgebraicRenewal { r } => format!("algebraic(r={r})"),
    }
}

fn mix_seed(parts: &[u64]) -> u64 {
    // splitmix64 over the parts.
    parts.iter().fold(0x9e37_79b9_7f4a_7c15u64, |acc, &p| {
        let mut z = acc ^ p.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let k = values.len();
    if k % 2 == 1 {
        values[k / 2]
    } else {
        (values[k / 2 - 1] + values[k / 2]) / 2.0
    }
}

/// Trains one model per (process, m, seed) in parallel and summarizes the
/// median excess risk per sample size with a log-log fit.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepOutcome> {
    cfg.validate()?;
    let target = cfg.target.build(cfg.d_x, cfg.n)?;
    let gamma = target.holder()?.gamma;
    let dn = (cfg.d_x * cfg.n) as f64;
    let mut ms = cfg.ms.clone();
    ms.sort_unstable();
    let jobs: Vec<(usize, usize, u64)> = (0..cfg.processes.len())
        .flat_map(|p| ms.iter().flat_map(move |&m| cfg.seeds.iter().map(move |&s| (p, m, s))))
        .collect();
    let reports = jobs
        .par_iter()
        .map(|&(p, m, seed)| {
            let kind = &cfg.processes[p];
            let process = MixingProcess::new(kind.clone(), cfg.d_x)?;
            let budget = rate_budget(m as f64, gamma, cfg.d_x, cfg.n, Regime::of(kind))?;
            let data = make_dataset(&process, m, cfg.n, &target, cfg.sigma, mix_seed(&[seed, m as u64, p as u64, 0]))?;
            let train = TrainConfig {
                arch: budget.arch,
                steps: cfg.steps,
                lr: cfg.lr,
                lr_final: cfg.lr_final,
                init: cfg.init,
                seed: mix_seed(&[seed, m as u64, p as u64, 1]),
                truncation: budget.b_m,
            };
            let out = train_erm(&data.windows, &data.targets, &train)?;
            let model = &out.model;
            let risk = excess_risk(
                &|xs| model.predict(xs),
                budget.b_m,
                &target,
                &process,
                cfg.risk_samples,
                mix_seed(&[seed, m as u64, p as u64, 2]),
            )?;
            Ok(RiskReport {
                process: label(kind),
                m,
                seed,
                train_risk: out.best_risk,
                excess_risk: risk.value,
                std_error: risk.std_error,
                width: budget.arch.width,
                truncation: budget.b_m,
                best_step: out.best_step,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut summaries = Vec::with_capacity(cfg.processes.len());
    for kind in &cfg.processes {
        let name = label(kind);
        let medians: Vec<(usize, f64)> = ms
            .iter()
            .map(|&m| {
                let mut v: Vec<f64> =
                    reports.iter().filter(|r| r.process == name && r.m == m).map(|r| r.excess_risk).collect();
                (m, median(&mut v))
            })
            .collect();
        let fit = rate_fit(&medians.iter().map(|&(m, r)| (m as f64, r)).collect::<Vec<_>>())?;
        summaries.push(SweepSummary {
            process: name,
            medians,
            fit,
            predicted_exponent: Regime::of(kind).predicted_exponent(gamma, dn),
        });
    }
    Ok(SweepOutcome { reports, summaries })
}

pub fn write_reports_csv(path: &Path, reports: &[RiskReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in reports {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv(path: &Path, summaries: &[SweepSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["process", "m", "median_excess_risk", "fitted_slope", "slope_std_error", "r2", "predicted_exponent"])?;
    for s in summaries {
        for &(m, r) in &s.medians {
            w.write_record([
                s.process.clone(),
                m.to_string(),
                r.to_string(),
                s.fit.slope.to_string(),
                s.fit.slope_std_error.to_string(),
                s.fit.r2.to_string(),
                s.predicted_exponent.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
