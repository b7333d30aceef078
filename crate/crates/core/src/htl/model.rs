use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::source::SourceHypothesis;
use crate::error::{HtlError, Result};
use crate::kernel::KernelSpec;
use crate::losses::LossSpec;
use crate::points::Points;

/// Anything that assigns a real score to a feature vector.
pub trait Scorer {
    fn score(&self, x: &[f64]) -> f64;
}

impl Scorer for SourceHypothesis {
    fn score(&self, x: &[f64]) -> f64 {
        SourceHypothesis::score(self, x)
    }
}

impl<F: Fn(&[f64]) -> f64> Scorer for F {
    fn score(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub iterations: usize,
    /// Euclidean norm of the optimality residual `w · y ⊙ φ'(m) + 2λa` at exit.
    pub residual_norm: f64,
    pub objective: f64,
}

/// A fitted transfer learner `𝒜 = ĥ + h_S` with `ĥ = Σ a_j k(x_j, ·)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub coeffs: Vec<f64>,
    pub train_features: Points,
    pub kernel: KernelSpec,
    pub lambda: f64,
    pub loss: LossSpec,
    pub source: SourceHypothesis,
    pub solver_stats: SolverStats,
    /// For a leave-one-out refit, the index removed from the parent training set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omitted_index: Option<usize>,
}

impl FittedModel {
    /// ĥ(x) only.
    pub fn correction(&self, x: &[f64]) -> f64 {
        self.train_features
            .rows()
            .zip(&self.coeffs)
            .map(|(xj, a)| a * self.kernel.eval(xj, x))
            .sum()
    }

    /// `ĥ(x) + h_S(x)` with a dimension check.
    pub fn predict_score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.train_features.dim() {
            return Err(HtlError::Dimension {
                expected: self.train_features.dim(),
                got: x.len(),
            });
        }
        if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
            return Err(HtlError::Domain(format!("non-finite feature {bad}")));
        }
        Ok(self.score(x))
    }

    pub fn coeff_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.coeffs)
    }

    /// `‖ĥ‖²_k = aᵀ G a`.
    pub fn rkhs_norm_sq(&self) -> Result<f64> {
        let g = self.kernel.gram(&self.train_features)?;
        let a = self.coeff_vector();
        Ok((a.transpose() * g * &a)[(0, 0)].max(0.0))
    }
}

impl Scorer for FittedModel {
    fn score(&self, x: &[f64]) -> f64 {
        self.correction(x) + self.source.score(x)
    }
}

/// `𝒜(x)` for a fitted model.
pub fn predict_score(model: &FittedModel, x: &[f64]) -> Result<f64> {
    model.predict_score(x)
}
