//! Nonparametric regression on β-mixing sequences with a trainable
//! Transformer: data generation, approximate ERM, excess risk and rate fits.

mod experiment;
mod model;
mod process;
mod train;

pub use experiment::{
    excess_risk, make_dataset, rate_budget, rate_fit, run_sweep, write_reports_csv, write_summary_csv, Budget, RateFit, Regime, RegressionDataset,
    RiskEstimate, RiskReport, SweepConfig, SweepOutcome, SweepSummary,
};
pub use model::{gradient_check, BlockParams, HeadParams, InitConfig, Model};
pub use process::{empirical_beta, BoundKind, MixingBound, MixingProcess, ProcessKind, RENEWAL_LEVELS};
pub use train::{train_erm, TrainConfig, TrainOutcome};
