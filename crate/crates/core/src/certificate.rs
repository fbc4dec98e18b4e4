//! Measured-versus-bound reports attached to every constructed network.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{ErrorEstimate, RegionFilter};
use crate::nn::{ArchSpec, TransformerNetwork};

/// Sampling settings shared by the `assemble_*` builders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasureConfig {
    /// Monte Carlo draws for sup and L^p estimates.
    pub samples: usize,
    pub seed: u64,
    /// Points per axis of a dense sup grid; `None` skips the grid.
    pub grid_resolution: Option<usize>,
    /// Order of the reported L^p error.
    pub p: f64,
    /// Random pairs for the smoothness spot check.
    pub spot_check_pairs: usize,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        Self { samples: 10_000, seed: 0, grid_resolution: None, p: 2.0, spot_check_pairs: 1000 }
    }
}

impl MeasureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples < 100 {
            return Err(Error::InvalidParam(format!("need at least 100 samples, got {}", self.samples)));
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(Error::InvalidParam(format!("L^p order must be finite and >= 1, got {}", self.p)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ApproxCertificate {
    pub construction: String,
    pub target: String,
    /// Named scalar inputs such as `K`, `delta`, `gamma`, `K_H`.
    pub parameters: BTreeMap<String, f64>,
    pub built_dims: ArchSpec,
    /// Dimensions stated for the construction this one follows.
    pub claimed_dims: ArchSpec,
    /// Entrywise sup bound on `region`, if one is known in closed form.
    pub theoretical_bound: Option<f64>,
    pub region: RegionFilter,
    pub measured_sup: Option<ErrorEstimate>,
    pub measured_lp: Option<ErrorEstimate>,
    pub lp_bound: Option<f64>,
    pub pass: bool,
    pub notes: Vec<String>,
    pub seeds: Vec<u64>,
    #[serde(skip)]
    pub network: TransformerNetwork,
}

impl ApproxCertificate {
    /// `pass` holds iff every measured value is within its bound.
    pub(crate) fn settle(&mut self) {
        let sup_ok = match (&self.measured_sup, self.theoretical_bound) {
            (Some(m), Some(b)) => m.value <= b,
            _ => true,
        };
        let lp_ok = match (&self.measured_lp, self.lp_bound) {
            (Some(m), Some(b)) => m.value <= b,
            _ => true,
        };
        self.pass = sup_ok && lp_ok;
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
