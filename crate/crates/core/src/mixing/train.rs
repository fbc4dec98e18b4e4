//! Approximate empirical risk minimization: full-batch Adam with a cosine
//! step-size schedule, keeping the iterate with the lowest training risk.

use serde::{Deserialize, Serialize};

use super::model::{InitConfig, Model};
use crate::error::{Error, Result};
use crate::nn::{ArchSpec, Matrix};

/// Training stops with an error once the risk exceeds this multiple of the initial risk.
pub const DIVERGENCE_FACTOR: f64 = 1e3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub arch: ArchSpec,
    pub steps: usize,
    /// Step size at the first step.
    pub lr: f64,
    /// Step size reached at the last step.
    pub lr_final: f64,
    #[serde(default)]
    pub init: InitConfig,
    pub seed: u64,
    /// Truncation level `B_m` applied to predictions at evaluation.
    pub truncation: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if !(self.truncation > 0.0 && self.truncation.is_finite()) {
            return Err(Error::InvalidParam(format!("truncation level must be positive, got {}", self.truncation)));
        }
        if !(self.lr > 0.0 && self.lr_final > 0.0 && self.lr_final <= self.lr) {
            return Err(Error::InvalidParam("need 0 < lr_final ≤ lr".into()));
        }
        Ok(())
    }

    fn step_size(&self, step: usize) -> f64 {
        let t = if self.steps <= 1 { 1.0 } else { step as f64 / (self.steps - 1) as f64 };
        self.lr_final + 0.5 * (self.lr - self.lr_final) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub initial_risk: f64,
    pub best_risk: f64,
    pub best_step: usize,
    /// Training risk before each update.
    pub history: Vec<f64>,
}

pub fn train_erm(xs: &[Matrix], ys: &[f64], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if xs.is_empty() {
        return Err(Error::InvalidParam("empty dataset".into()));
    }
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    let mut model = Model::init(cfg.arch, &cfg.init, cfg.seed)?;
    let mut theta = model.to_flat();
    let mut m1 = vec![0.0; theta.len()];
    let mut m2 = vec![0.0; theta.len()];
    let mut history = Vec::with_capacity(cfg.steps + 1);
    let mut best = (f64::INFINITY, 0, theta.clone());
    let mut initial = None;

    for step in 0..=cfg.steps {
        model.set_flat(&theta)?;
        let (risk, grad) = model.risk_and_grad(xs, ys)?;
        let initial_risk = *initial.get_or_insert(risk);
        if risk > DIVERGENCE_FACTOR * initial_risk.max(f64::MIN_POSITIVE) {
            return Err(Error::Diverged { step, risk, initial: initial_risk });
        }
        history.push(risk);
        if risk < best.0 {
            best = (risk, step, theta.clone());
        }
        if step == cfg.steps {
            break;
        }
        let lr = cfg.step_size(step);
        let t = (step + 1) as i32;
        let (c1, c2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
        for (((p, g), a), b) in theta.iter_mut().zip(grad.to_flat()).zip(&mut m1).zip(&mut m2) {
            *a = BETA1 * *a + (1.0 - BETA1) * g;
            *b = BETA2 * *b + (1.0 - BETA2) * g * g;
            *p -= lr * (*a / c1) / ((*b / c2).sqrt() + EPS);
        }
    }
    model.set_flat(&best.2)?;
    Ok(TrainOutcome { model, initial_risk: history[0], best_risk: best.0, best_step: best.1, history })
}
