//! Empirical stability measurements, set against the theoretical certificates.

use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{make_target, ScenarioConfig, Split};
use crate::error::{HtlError, Result};
use crate::htl::{empirical_risk, Dataset, SourceHypothesis};
use crate::kernel::KernelSpec;
use crate::losses::LossSpec;
use crate::rerm::{fit, SolverConfig, TrainingProblem};

/// Absolute slack added to the right-hand side of the leave-one-out deviation check.
pub const LEMMA_A4_SLACK: f64 = 1e-6;

/// Per-fold measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexDetail {
    pub i: usize,
    /// Mean over fresh points of `|ℓ(𝒜(𝒟), z) - ℓ(𝒜(𝒟^{\i}), z)|`.
    pub delta_ell_mean: f64,
    /// Largest such difference over fresh points.
    pub delta_ell_max: f64,
    /// The same difference at the removed sample `Z_i`.
    pub delta_ell_at_i: f64,
    /// `‖ĥ - ĥ^{\i}‖_k`.
    pub rkhs_dev: f64,
    /// `√k(X_i, X_i) |φ'(𝒜(𝒟, X_i) Y_i)| / (λ n)`.
    pub lemma_a4_rhs: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub n: usize,
    pub n_fresh: usize,
    pub emp_hypothesis_stability: f64,
    pub emp_pointwise_stability: f64,
    /// Largest observed `|Δℓ|` over all folds and fresh points. An observation, not a certificate.
    pub witnessed_max_delta: f64,
    /// `R̂[𝒜] - 𝓡̂_fresh[𝒜]` for this one training set.
    pub emp_gen_gap: f64,
    pub train_risk: f64,
    pub fresh_risk: f64,
    pub loo_risk: f64,
    /// `|R̂_loo - 𝓡̂_fresh|`.
    pub loo_gap: f64,
    pub lemma_a4_violations: usize,
    pub per_index_details: Vec<IndexDetail>,
}

impl AuditReport {
    /// Writes the per-index table as CSV.
    pub fn write_details_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["i", "delta_ell_mean", "rkhs_dev", "lemma_a4_rhs", "violated"])
            .map_err(csv_err)?;
        for d in &self.per_index_details {
            w.write_record([
                d.i.to_string(),
                format!("{:e}", d.delta_ell_mean),
                format!("{:e}", d.rkhs_dev),
                format!("{:e}", d.lemma_a4_rhs),
                d.violated.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| HtlError::Parse(e.to_string()))?;
        Ok(())
    }

    pub fn details_to_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|source| HtlError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.write_details_csv(std::io::BufWriter::new(file))
    }
}

fn csv_err(e: csv::Error) -> HtlError {
    HtlError::Parse(e.to_string())
}

fn loss_vec(loss: &LossSpec, margins: &DVector<f64>) -> Result<Vec<f64>> {
    margins.iter().map(|&m| loss.value(m)).collect()
}

/// Fits on `train` and on every leave-one-out fold, and measures loss
/// differences on `fresh` and at the removed samples.
pub fn audit_stability(
    train: &Dataset,
    fresh: &Dataset,
    loss: &LossSpec,
    kernel: &KernelSpec,
    lambda: f64,
    source: &SourceHypothesis,
    cfg: &SolverConfig,
) -> Result<AuditReport> {
    let n = train.n();
    if n < 2 {
        return Err(HtlError::Degenerate("stability audit needs n >= 2".into()));
    }
    if fresh.dim() != train.dim() {
        return Err(HtlError::Dimension {
            expected: train.dim(),
            got: fresh.dim(),
        });
    }
    let problem = TrainingProblem::new(train, loss, kernel, lambda, source)?;
    let full = problem.solve_full(cfg)?;

    let cross = kernel.cross(fresh.features(), train.features())?;
    let fresh_offsets = DVector::from_vec(source.scores(fresh.features())?);
    let fresh_labels = DVector::from_column_slice(fresh.labels());
    let fresh_margins = |coeffs: &DVector<f64>| (&cross * coeffs + &fresh_offsets).component_mul(&fresh_labels);

    let full_fresh = loss_vec(loss, &fresh_margins(&full.coeffs))?;
    let full_train_margins = problem.margins(&full.coeffs);
    let full_train = loss_vec(loss, &full_train_margins)?;
    let nf = n as f64;

    let details: Vec<(IndexDetail, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let fold = problem.solve_fold(i, &full.coeffs, cfg)?;
            let emb = problem.embed(i, &fold.coeffs);
            let fold_fresh = loss_vec(loss, &fresh_margins(&emb))?;
            let (sum, max) = full_fresh
                .iter()
                .zip(&fold_fresh)
                .map(|(a, b)| (a - b).abs())
                .fold((0.0, 0.0f64), |(s, m), d| (s + d, m.max(d)));
            let held_out = loss.value(problem.fold_margin_at_removed(i, &fold.coeffs))?;
            let rkhs_dev = problem.rkhs_norm(&(&full.coeffs - &emb));
            let k_ii = problem.gram()[(i, i)].max(0.0);
            let lemma_a4_rhs =
                k_ii.sqrt() * loss.derivative(full_train_margins[i])?.abs() / (lambda * nf);
            Ok((
                IndexDetail {
                    i,
                    delta_ell_mean: sum / fold_fresh.len() as f64,
                    delta_ell_max: max,
                    delta_ell_at_i: (full_train[i] - held_out).abs(),
                    rkhs_dev,
                    lemma_a4_rhs,
                    violated: rkhs_dev > lemma_a4_rhs + LEMMA_A4_SLACK,
                },
                held_out,
            ))
        })
        .collect::<Result<_>>()?;

    let train_risk = full_train.iter().sum::<f64>() / nf;
    let fresh_risk = full_fresh.iter().sum::<f64>() / full_fresh.len() as f64;
    let loo_risk = details.iter().map(|(_, h)| h).sum::<f64>() / nf;
    let per_index_details: Vec<IndexDetail> = details.into_iter().map(|(d, _)| d).collect();
    Ok(AuditReport {
        n,
        n_fresh: fresh.n(),
        emp_hypothesis_stability: per_index_details.iter().map(|d| d.delta_ell_mean).sum::<f64>() / nf,
        emp_pointwise_stability: per_index_details.iter().map(|d| d.delta_ell_at_i).sum::<f64>() / nf,
        witnessed_max_delta: per_index_details
            .iter()
            .map(|d| d.delta_ell_max.max(d.delta_ell_at_i))
            .fold(0.0, f64::max),
        emp_gen_gap: train_risk - fresh_risk,
        train_risk,
        fresh_risk,
        loo_risk,
        loo_gap: (loo_risk - fresh_risk).abs(),
        lemma_a4_violations: per_index_details.iter().filter(|d| d.violated).count(),
        per_index_details,
    })
}

/// Leave-one-out and held-out risks of one fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LooAudit {
    pub loo_risk: f64,
    pub test_risk: f64,
    pub gap: f64,
}

pub fn audit_loo(
    train: &Dataset,
    test: &Dataset,
    loss: &LossSpec,
    kernel: &KernelSpec,
    lambda: f64,
    source: &SourceHypothesis,
    cfg: &SolverConfig,
) -> Result<LooAudit> {
    let loo_risk = crate::htl::loo_risk(train, loss, kernel, lambda, source, cfg)?;
    let model = fit(train, loss, kernel, lambda, source, cfg)?;
    let test_risk = empirical_risk(&model, test, loss)?;
    Ok(LooAudit {
        loo_risk,
        test_risk,
        gap: (loo_risk - test_risk).abs(),
    })
}

/// Monte Carlo mean of a per-replica statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    /// Standard error of the mean; 0 for a single replica.
    pub stderr: f64,
    pub values: Vec<f64>,
}

impl MonteCarloEstimate {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        let k = values.len();
        if k == 0 {
            return Err(HtlError::Config("at least one replica is required".into()));
        }
        let mean = values.iter().sum::<f64>() / k as f64;
        let stderr = if k > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
            (var / k as f64).sqrt()
        } else {
            0.0
        };
        Ok(MonteCarloEstimate { mean, stderr, values })
    }
}

/// Estimates `E[R̂[𝒜] - 𝓡[𝒜]]` over fresh target training sets.
///
/// Replica `r` draws its target train and test samples from `scenario` with
/// seed `seed + r`; the test sample has `test_size` points.
#[allow(clippy::too_many_arguments)]
pub fn audit_gen_gap(
    scenario: &ScenarioConfig,
    loss: &LossSpec,
    kernel: &KernelSpec,
    lambda: f64,
    source: &SourceHypothesis,
    replicas: usize,
    test_size: usize,
    seed: u64,
    cfg: &SolverConfig,
) -> Result<MonteCarloEstimate> {
    if replicas == 0 {
        return Err(HtlError::Config("replicas must be positive".into()));
    }
    let values = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let sc = ScenarioConfig {
                n_test: test_size,
                seed: seed.wrapping_add(r),
                ..*scenario
            };
            let train = make_target(&sc, Split::Train)?;
            let test = make_target(&sc, Split::Test)?;
            let model = fit(&train, loss, kernel, lambda, source, cfg)?;
            Ok(empirical_risk(&model, &train, loss)? - empirical_risk(&model, &test, loss)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    MonteCarloEstimate::from_values(values)
}
