//! Datasets, the source hypothesis, the composite predictor `𝒜 = ĥ + h_S`
//! and the risk estimators built on them.

mod dataset;
mod model;
mod risk;
mod source;

pub use dataset::Dataset;
pub use model::{predict_score, FittedModel, Scorer, SolverStats};
pub use risk::{
    empirical_risk, empirical_risk_minus_i, loo_losses, loo_risk, mean_without, per_sample_losses,
};
pub use source::{SourceForm, SourceHypothesis, SCALE_SQUASH};
