//! Positive-definite kernels and their Gram matrices.

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{HtlError, Result};
use crate::points::Points;

/// Inflation applied to data-estimated bounds of unbounded-domain kernels.
pub const KAPPA_INFLATION: f64 = 1.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelKind {
    /// `⟨x, z⟩`
    Linear,
    /// `exp(-γ ‖x - z‖²)`
    Gaussian { gamma: f64 },
    /// `(⟨x, z⟩ + offset)^degree`
    Polynomial { degree: u32, offset: f64 },
    /// `tanh(scale ⟨x, z⟩ + offset)`; only conditionally positive definite.
    Sigmoid { scale: f64, offset: f64 },
}

/// A kernel together with an optional user-supplied bound κ on its values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    #[serde(flatten)]
    pub kind: KernelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
}

impl From<KernelKind> for KernelSpec {
    fn from(kind: KernelKind) -> Self {
        KernelSpec { kind, kappa: None }
    }
}

fn dot(x: &[f64], z: &[f64]) -> f64 {
    x.iter().zip(z).map(|(a, b)| a * b).sum()
}

impl KernelSpec {
    pub fn linear() -> Self {
        KernelKind::Linear.into()
    }

    pub fn gaussian(gamma: f64) -> Self {
        KernelKind::Gaussian { gamma }.into()
    }

    pub fn polynomial(degree: u32, offset: f64) -> Self {
        KernelKind::Polynomial { degree, offset }.into()
    }

    pub fn sigmoid(scale: f64, offset: f64) -> Self {
        KernelKind::Sigmoid { scale, offset }.into()
    }

    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.kappa = Some(kappa);
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            KernelKind::Gaussian { gamma } if !(gamma > 0.0 && gamma.is_finite()) => Err(
                HtlError::Config(format!("gaussian gamma must be positive, got {gamma}")),
            ),
            KernelKind::Polynomial { degree: 0, .. } => {
                Err(HtlError::Config("polynomial degree must be positive".into()))
            }
            _ => match self.kappa {
                Some(k) if !(k > 0.0 && k.is_finite()) => {
                    Err(HtlError::Config(format!("kappa must be positive, got {k}")))
                }
                _ => Ok(()),
            },
        }
    }

    /// k(x, z).
    pub fn eval(&self, x: &[f64], z: &[f64]) -> f64 {
        match self.kind {
            KernelKind::Linear => dot(x, z),
            KernelKind::Gaussian { gamma } => {
                let sq: f64 = x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
                (-gamma * sq).exp()
            }
            KernelKind::Polynomial { degree, offset } => (dot(x, z) + offset).powi(degree as i32),
            KernelKind::Sigmoid { scale, offset } => (scale * dot(x, z) + offset).tanh(),
        }
    }

    /// Whether every Gram matrix of this kernel is positive semi-definite.
    pub fn is_positive_definite(&self) -> bool {
        match self.kind {
            KernelKind::Linear | KernelKind::Gaussian { .. } => true,
            KernelKind::Polynomial { offset, .. } => offset >= 0.0,
            KernelKind::Sigmoid { .. } => false,
        }
    }

    /// `G[i][j] = k(x_i, x_j)`.
    pub fn gram(&self, points: &Points) -> Result<DMatrix<f64>> {
        let n = points.len();
        if n == 0 {
            return Err(HtlError::Dimension { expected: 1, got: 0 });
        }
        let mut g = DMatrix::zeros(n, n);
        for i in 0..n {
            let xi = points.row(i);
            for j in i..n {
                let v = self.eval(xi, points.row(j));
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        if !self.is_positive_definite() {
            let defect = psd_defect(&g);
            if defect > 0.0 {
                warn!("gram matrix of {:?} has negative eigenvalue mass {defect:.3e}", self.kind);
            }
        }
        Ok(g)
    }

    /// `K[i][j] = k(a_i, b_j)`.
    pub fn cross(&self, a: &Points, b: &Points) -> Result<DMatrix<f64>> {
        if a.dim() != b.dim() {
            return Err(HtlError::Dimension {
                expected: a.dim(),
                got: b.dim(),
            });
        }
        Ok(DMatrix::from_fn(a.len(), b.len(), |i, j| {
            self.eval(a.row(i), b.row(j))
        }))
    }

    /// Largest kernel value witnessed on `sample`, or the analytic bound where one exists.
    pub fn estimate_kappa(&self, sample: &Points) -> f64 {
        match self.kind {
            KernelKind::Gaussian { .. } | KernelKind::Sigmoid { .. } => 1.0,
            _ if self.is_positive_definite() => sample
                .rows()
                .map(|x| self.eval(x, x))
                .fold(f64::NEG_INFINITY, f64::max),
            _ => {
                let mut best = f64::NEG_INFINITY;
                for (i, x) in sample.rows().enumerate() {
                    for z in sample.rows().skip(i) {
                        best = best.max(self.eval(x, z));
                    }
                }
                best
            }
        }
    }

    /// The κ used by the stability certificates: the supplied value if any,
    /// otherwise the estimate on `sample`, inflated for unbounded-domain kernels.
    pub fn resolve_kappa(&self, sample: &Points) -> f64 {
        if let Some(k) = self.kappa {
            return k;
        }
        let est = self.estimate_kappa(sample);
        let k = match self.kind {
            KernelKind::Linear | KernelKind::Polynomial { .. } => est * KAPPA_INFLATION,
            _ => est,
        };
        if k > 0.0 {
            k
        } else {
            f64::MIN_POSITIVE
        }
    }
}

/// `max(0, -λ_min(G))` relative to the PSD tolerance `1e-8 · trace(G)`; zero for a PSD matrix.
pub fn psd_defect(g: &DMatrix<f64>) -> f64 {
    let eig = g.clone().symmetric_eigen();
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let tol = 1e-8 * g.trace().abs();
    if min < -tol {
        -min
    } else {
        0.0
    }
}
