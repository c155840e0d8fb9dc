//! Variance-decomposition pipelines.

pub mod cascade;
pub mod factorial;
pub mod noise;
pub mod power;
pub mod selection;

pub use cascade::{run_cascade, CascadeOptions, CascadeReport, CascadeResult, CascadeTargetRow};
pub use factorial::{factorial_marginals, CellSummary, FactorMarginal, FACTOR_NAMES};
pub use noise::{noise_calibration, project_bound, run_noise_curve, LevelUnit, NoiseCurve, NoisePoint, NoiseProjection};
pub use power::{power_grid, PowerRow};
pub use selection::{
    audit_trials, expected_max, read_revalidation, read_trial_table, write_trial_table, Phase, Revalidation, Trial,
    TrialAudit, TrialTable,
};
