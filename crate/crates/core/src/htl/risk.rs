use rayon::prelude::*;

use super::dataset::Dataset;
use super::model::Scorer;
use super::source::SourceHypothesis;
use crate::error::{HtlError, Result};
use crate::kernel::KernelSpec;
use crate::losses::LossSpec;
use crate::rerm::{SolverConfig, TrainingProblem};

/// `φ(score(X_i) · Y_i)` for every sample.
pub fn per_sample_losses<S: Scorer + ?Sized>(
    scorer: &S,
    data: &Dataset,
    loss: &LossSpec,
) -> Result<Vec<f64>> {
    data.features()
        .rows()
        .zip(data.labels())
        .map(|(x, &y)| loss.value(scorer.score(x) * y))
        .collect()
}

/// Training error `(1/n) Σ φ(score(X_i) Y_i)`.
pub fn empirical_risk<S: Scorer + ?Sized>(scorer: &S, data: &Dataset, loss: &LossSpec) -> Result<f64> {
    let losses = per_sample_losses(scorer, data, loss)?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Training error with sample `i` removed, `(1/(n-1)) Σ_{j≠i} φ(score(X_j) Y_j)`.
pub fn empirical_risk_minus_i<S: Scorer + ?Sized>(
    scorer: &S,
    data: &Dataset,
    loss: &LossSpec,
    i: usize,
) -> Result<f64> {
    let losses = per_sample_losses(scorer, data, loss)?;
    mean_without(&losses, i)
}

/// Mean of `values` with entry `i` left out.
pub fn mean_without(values: &[f64], i: usize) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(HtlError::Degenerate(
            "leave-one-out mean needs at least two samples".into(),
        ));
    }
    if i >= n {
        return Err(HtlError::Dimension { expected: n, got: i });
    }
    let total: f64 = values
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, v)| v)
        .sum();
    Ok(total / (n - 1) as f64)
}

/// Leave-one-out estimate `(1/n) Σ_i ℓ(𝒜(𝒟^{\i}), Z_i)`, refitting once per fold.
pub fn loo_risk(
    train: &Dataset,
    loss: &LossSpec,
    kernel: &KernelSpec,
    lambda: f64,
    source: &SourceHypothesis,
    cfg: &SolverConfig,
) -> Result<f64> {
    Ok(loo_losses(train, loss, kernel, lambda, source, cfg)?
        .iter()
        .sum::<f64>()
        / train.n() as f64)
}

/// Per-fold held-out losses `ℓ(𝒜(𝒟^{\i}), Z_i)`, in index order.
pub fn loo_losses(
    train: &Dataset,
    loss: &LossSpec,
    kernel: &KernelSpec,
    lambda: f64,
    source: &SourceHypothesis,
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    if train.n() < 2 {
        return Err(HtlError::Degenerate("leave-one-out needs n >= 2".into()));
    }
    let problem = TrainingProblem::new(train, loss, kernel, lambda, source)?;
    let full = problem.solve_full(cfg)?;
    (0..train.n())
        .into_par_iter()
        .map(|i| {
            let fold = problem.solve_fold(i, &full.coeffs, cfg)?;
            let margin = problem.fold_margin_at_removed(i, &fold.coeffs);
            loss.value(margin)
        })
        .collect()
}
