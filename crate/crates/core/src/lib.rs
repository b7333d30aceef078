//! Kernel hypothesis transfer learning.
//!
//! A target learner is fit by regularized empirical risk minimization in an
//! RKHS, with a frozen source scorer `h_S` added as an offset:
//! `𝒜(𝒟) = ĥ + h_S`. Alongside the learner the crate computes stability
//! certificates for it, audits them empirically, and generates the synthetic
//! rotated-target scenario used to study negative transfer.

pub mod audit;
pub mod bounds;
pub mod datagen;
pub mod error;
pub mod experiment;
pub mod htl;
pub mod kernel;
pub mod losses;
pub mod points;
pub mod rerm;

pub use audit::{audit_gen_gap, audit_loo, audit_stability, AuditReport, IndexDetail, LooAudit, MonteCarloEstimate};
pub use bounds::{
    beta_bound, c_s, estimate_source_loss_sup, excess_lambda_schedule, gamma_bound, gen_gap_bound, radius,
    radius_loo, BoundContext, ExcessSchedule, LooRadius, StabilityBoundReport,
};
pub use datagen::{make_source, make_target, sample_t, stream_rng, ScenarioConfig, Split, TComponent};
pub use error::{HtlError, Result};
pub use experiment::{run_negative_transfer, CurveRow, ExperimentConfig, SourceTrainer};
pub use htl::{
    empirical_risk, loo_risk, per_sample_losses, predict_score, Dataset, FittedModel, Scorer, SolverStats,
    SourceForm, SourceHypothesis,
};
pub use kernel::{KernelKind, KernelSpec};
pub use losses::{DerivativeBound, LossSpec};
pub use points::Points;
pub use rerm::{
    fit, gradient, objective, refit_without, ridge_oracle, rkhs_distance, DescentMethod, FoldWeighting,
    SolverConfig, TrainingProblem,
};
