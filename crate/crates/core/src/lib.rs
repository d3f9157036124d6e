//! Subsampling estimators for the Cox proportional hazards model.
//!
//! The full-data partial-likelihood fit is available through
//! [`newton_raphson`]. For large data with few events, [`two_step_fit`] keeps
//! every event, draws a weighted subsample of the censored records with
//! optimal probabilities, and fits the weighted partial likelihood on the
//! result.

pub mod bench;
pub mod cox;
pub mod data;
pub mod error;
pub mod linalg;
pub mod sampling;
pub mod simgen;
pub mod two_step;

pub use cox::{
    breslow, log_partial_likelihood, newton_raphson, score_and_info, sweep_sums, BaselineHazard,
    EventTimeSums, FitResult, NewtonOptions, ScoreInfo, SweepSums, WeightVector,
};
pub use data::{Dataset, SurvivalRecord};
pub use error::{Error, Result};
pub use sampling::{
    draw, exclusion_set, informative_censored, probs_a, probs_l, probs_uniform, score_residuals,
    Method, SamplingPlan, ScoreResiduals, Subsample, SubsampleDraw,
};
pub use two_step::{
    baseline_variance, cov_beta, phi_full, phi_subsample, two_step_fit, PhiSource,
    SubsampleEstimate, TwoStepOptions,
};
