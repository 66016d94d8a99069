//! Transition operators, synthetic drift models and the multi-turn harnesses
//! that measure how far a latent wanders from its round-0 value.
//!
//! A transition maps a latent to the next turn's latent. The DiT-like model
//! adds a persistent low-frequency bias and the VAE-like model adds flat
//! noise; composing them gives the two-term bias split reported by
//! [`no_op_bias`].

mod harness;
mod metrics;
mod operator;
mod report;

pub use harness::{
    run_attribution, run_cycle_trajectory, run_no_op_trajectory, Attribution, Trajectory,
    TrajectoryOptions,
};
pub use metrics::{global_ssim, latent_metrics, paired_bootstrap, LatentMetrics, PairedSummary};
pub use operator::{
    apply_transition, no_op_bias, synthetic_latent, NoOpBias, SyntheticDitParams,
    SyntheticVaeParams, TransitionKind, TransitionOperator,
};
pub use report::{DriftMeter, DriftRecord, DriftReport, MeterConfig, REPORT_COLUMNS};
