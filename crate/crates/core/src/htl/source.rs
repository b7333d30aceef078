use serde::{Deserialize, Serialize};

use crate::error::{HtlError, Result};
use crate::kernel::KernelSpec;
use crate::points::Points;

/// Squashing level used by [`SourceHypothesis::scale_score`]: the sup-norm point maps to this
/// fraction of the target bound.
pub const SCALE_SQUASH: f64 = 0.99;

/// Functional form of a frozen source scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum SourceForm {
    /// `x ↦ ⟨w, x⟩`
    Linear { weights: Vec<f64> },
    /// `x ↦ Σ c_j k(s_j, x)`
    KernelExpansion {
        support: Points,
        coeffs: Vec<f64>,
        kernel: KernelSpec,
    },
    /// `x ↦ c`
    Constant { value: f64 },
    /// `x ↦ bound · tanh(h(x) / sup_norm · atanh(0.99))`
    Scaled {
        inner: Box<SourceHypothesis>,
        bound: f64,
        sup_norm: f64,
    },
}

/// The source hypothesis `h_S`, used as a fixed offset by the target learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceHypothesis {
    #[serde(flatten)]
    pub form: SourceForm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sup_norm_hint: Option<f64>,
}

impl SourceHypothesis {
    pub fn linear(weights: Vec<f64>) -> Self {
        SourceForm::Linear { weights }.into()
    }

    pub fn constant(value: f64) -> Self {
        SourceHypothesis {
            form: SourceForm::Constant { value },
            sup_norm_hint: Some(value.abs()),
        }
    }

    pub fn kernel_expansion(support: Points, coeffs: Vec<f64>, kernel: KernelSpec) -> Result<Self> {
        if support.len() != coeffs.len() {
            return Err(HtlError::Dimension {
                expected: support.len(),
                got: coeffs.len(),
            });
        }
        Ok(SourceForm::KernelExpansion {
            support,
            coeffs,
            kernel,
        }
        .into())
    }

    pub fn with_sup_norm_hint(mut self, hint: f64) -> Self {
        self.sup_norm_hint = Some(hint);
        self
    }

    /// Input dimension, when the form fixes one.
    pub fn input_dim(&self) -> Option<usize> {
        match &self.form {
            SourceForm::Linear { weights } => Some(weights.len()),
            SourceForm::KernelExpansion { support, .. } => Some(support.dim()),
            SourceForm::Constant { .. } => None,
            SourceForm::Scaled { inner, .. } => inner.input_dim(),
        }
    }

    pub fn check_dim(&self, d: usize) -> Result<()> {
        match self.input_dim() {
            Some(expected) if expected != d => Err(HtlError::Dimension { expected, got: d }),
            _ => Ok(()),
        }
    }

    /// h_S(x). The caller guarantees `x` has the source's input dimension.
    pub fn score(&self, x: &[f64]) -> f64 {
        match &self.form {
            SourceForm::Linear { weights } => weights.iter().zip(x).map(|(w, v)| w * v).sum(),
            SourceForm::KernelExpansion {
                support,
                coeffs,
                kernel,
            } => support
                .rows()
                .zip(coeffs)
                .map(|(s, c)| c * kernel.eval(s, x))
                .sum(),
            SourceForm::Constant { value } => *value,
            SourceForm::Scaled {
                inner,
                bound,
                sup_norm,
            } => bound * (inner.score(x) / sup_norm * SCALE_SQUASH.atanh()).tanh(),
        }
    }

    pub fn scores(&self, points: &Points) -> Result<Vec<f64>> {
        self.check_dim(points.dim())?;
        Ok(points.rows().map(|x| self.score(x)).collect())
    }

    /// `max |h_S|` over `sample`.
    pub fn estimate_sup_norm(&self, sample: &Points) -> Result<f64> {
        Ok(self
            .scores(sample)?
            .into_iter()
            .fold(0.0, |m, v: f64| m.max(v.abs())))
    }

    /// `‖h_S‖_∞`: the hint if present, otherwise estimated on `sample`.
    pub fn sup_norm(&self, sample: Option<&Points>) -> Result<f64> {
        match (self.sup_norm_hint, sample) {
            (Some(h), _) => Ok(h),
            (None, Some(s)) => self.estimate_sup_norm(s),
            (None, None) => Err(HtlError::Config(
                "source sup-norm unknown and no sample given to estimate it".into(),
            )),
        }
    }

    /// Monotone squashing of the score into `(-target_bound, target_bound)`.
    pub fn scale_score(&self, target_bound: f64, sample: Option<&Points>) -> Result<Self> {
        if !(target_bound > 0.0 && target_bound.is_finite()) {
            return Err(HtlError::Config(format!(
                "target bound must be positive, got {target_bound}"
            )));
        }
        let sup = self.sup_norm(sample)?;
        // h_S ≡ 0 maps to 0 for any positive normaliser
        let sup_norm = if sup > 0.0 { sup } else { 1.0 };
        Ok(SourceHypothesis {
            form: SourceForm::Scaled {
                inner: Box::new(self.clone()),
                bound: target_bound,
                sup_norm,
            },
            sup_norm_hint: Some(target_bound),
        })
    }
}

impl From<SourceForm> for SourceHypothesis {
    fn from(form: SourceForm) -> Self {
        SourceHypothesis {
            form,
            sup_norm_hint: None,
        }
    }
}
