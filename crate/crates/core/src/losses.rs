//! Margin-based surrogate losses φ and the stability functions Ψ₁/Ψ₂ that
//! convert a source risk into a stability magnitude.
//!
//! Every loss is evaluated at the margin `score * label`. All five losses are
//! convex, non-negative and differentiable everywhere.

use serde::{Deserialize, Serialize};

use crate::bounds::{c_s, BoundContext};
use crate::error::{HtlError, Result};

/// Default softplus temperature.
pub const DEFAULT_SOFTPLUS_S: f64 = 0.1;

/// Exponents above this value are reported as an unbounded loss.
const EXP_CLAMP: f64 = 700.0;

fn default_s() -> f64 {
    DEFAULT_SOFTPLUS_S
}

/// A surrogate classification loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum LossSpec {
    /// `e^{-x}`
    Exponential,
    /// `log(1 + e^{-x})`
    Logistic,
    /// `(1 - x)^2`
    Mse,
    /// `max(0, 1 - x)^2`
    SquaredHinge,
    /// `s log(1 + e^{(1 - x)/s})`
    Softplus {
        #[serde(default = "default_s")]
        s: f64,
    },
}

/// `sup_x |φ'(x)|`, with an explicit marker for unbounded derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DerivativeBound {
    Finite(f64),
    Unbounded,
}

impl DerivativeBound {
    /// `min(value, sup|φ'|^2 * factor)`; an unbounded derivative never caps.
    pub fn cap_squared(self, value: f64, factor: f64) -> f64 {
        match self {
            DerivativeBound::Finite(b) => value.min(factor * b * b),
            DerivativeBound::Unbounded => value,
        }
    }
}

impl LossSpec {
    /// Softplus with temperature `s`.
    pub fn softplus(s: f64) -> Result<Self> {
        let loss = LossSpec::Softplus { s };
        loss.validate()?;
        Ok(loss)
    }

    pub const ALL_NAMES: [&'static str; 5] =
        ["exponential", "logistic", "mse", "squared_hinge", "softplus"];

    /// Parse a loss by its config name, using the default softplus temperature.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "exponential" => Ok(LossSpec::Exponential),
            "logistic" => Ok(LossSpec::Logistic),
            "mse" => Ok(LossSpec::Mse),
            "squared_hinge" => Ok(LossSpec::SquaredHinge),
            "softplus" => Ok(LossSpec::Softplus { s: DEFAULT_SOFTPLUS_S }),
            other => Err(HtlError::Config(format!("unknown loss '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossSpec::Exponential => "exponential",
            LossSpec::Logistic => "logistic",
            LossSpec::Mse => "mse",
            LossSpec::SquaredHinge => "squared_hinge",
            LossSpec::Softplus { .. } => "softplus",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LossSpec::Softplus { s } if !(s > 0.0 && s.is_finite()) => Err(HtlError::Config(
                format!("softplus temperature must be positive, got {s}"),
            )),
            _ => Ok(()),
        }
    }

    /// φ(margin).
    pub fn value(&self, margin: f64) -> Result<f64> {
        check_finite(margin)?;
        Ok(self.value_unchecked(margin))
    }

    /// φ'(margin).
    pub fn derivative(&self, margin: f64) -> Result<f64> {
        check_finite(margin)?;
        Ok(self.derivative_unchecked(margin))
    }

    pub(crate) fn value_unchecked(&self, x: f64) -> f64 {
        match *self {
            LossSpec::Exponential => {
                if -x > EXP_CLAMP {
                    f64::INFINITY
                } else {
                    (-x).exp()
                }
            }
            LossSpec::Logistic => softplus_unit(-x),
            LossSpec::Mse => (1.0 - x) * (1.0 - x),
            LossSpec::SquaredHinge => {
                let h = (1.0 - x).max(0.0);
                h * h
            }
            LossSpec::Softplus { s } => s * softplus_unit((1.0 - x) / s),
        }
    }

    pub(crate) fn derivative_unchecked(&self, x: f64) -> f64 {
        match *self {
            LossSpec::Exponential => {
                if -x > EXP_CLAMP {
                    f64::NEG_INFINITY
                } else {
                    -(-x).exp()
                }
            }
            LossSpec::Logistic => -sigmoid(-x),
            LossSpec::Mse => -2.0 * (1.0 - x),
            LossSpec::SquaredHinge => -2.0 * (1.0 - x).max(0.0),
            LossSpec::Softplus { s } => -sigmoid((1.0 - x) / s),
        }
    }

    /// φ''(margin). For the squared hinge this is the right derivative at the kink.
    pub fn second_derivative(&self, x: f64) -> f64 {
        match *self {
            LossSpec::Exponential => {
                if -x > EXP_CLAMP {
                    f64::INFINITY
                } else {
                    (-x).exp()
                }
            }
            LossSpec::Logistic => sigmoid(x) * sigmoid(-x),
            LossSpec::Mse => 2.0,
            LossSpec::SquaredHinge => {
                if x < 1.0 {
                    2.0
                } else {
                    0.0
                }
            }
            LossSpec::Softplus { s } => {
                let u = (1.0 - x) / s;
                sigmoid(u) * sigmoid(-u) / s
            }
        }
    }

    /// `sup_x |φ'(x)|`.
    pub fn derivative_sup(&self) -> DerivativeBound {
        match self {
            LossSpec::Logistic | LossSpec::Softplus { .. } => DerivativeBound::Finite(1.0),
            LossSpec::Exponential | LossSpec::Mse | LossSpec::SquaredHinge => {
                DerivativeBound::Unbounded
            }
        }
    }

    /// Ψ₁ from the table of per-loss stability functions.
    pub fn psi1(&self, x: f64, ctx: &BoundContext) -> Result<f64> {
        check_psi_arg(x)?;
        let alpha = ctx.alpha();
        Ok(match *self {
            LossSpec::Mse | LossSpec::SquaredHinge => 8.0 * x * (4.0 * alpha + 1.0),
            LossSpec::Exponential => c_s(ctx)? * x * x * (2.0 * alpha * x).exp(),
            LossSpec::Logistic => {
                let g = x.sqrt().exp_m1();
                c_s(ctx)? * (2.0 * alpha * x).exp() * g * g
            }
            LossSpec::Softplus { s } => {
                let g = (x / s).sqrt().exp_m1();
                c_s(ctx)? * (2.0 * alpha * x).exp() * g * g
            }
        })
    }

    /// Ψ₂ from the table of per-loss stability functions.
    ///
    /// The logistic and softplus rows use the factor `(e^{√x} - 1)` as tabulated,
    /// although one step of the underlying derivation carries an additional
    /// `e^{√x}`.
    pub fn psi2(&self, x: f64, ctx: &BoundContext) -> Result<f64> {
        check_psi_arg(x)?;
        let alpha = ctx.alpha();
        Ok(match *self {
            LossSpec::Mse | LossSpec::SquaredHinge => 8.0 * x * (4.0 * alpha + 1.0),
            LossSpec::Exponential => {
                let m_s = ctx.m_s.ok_or_else(|| {
                    HtlError::Config("exponential Ψ₂ requires the source loss bound M_S".into())
                })?;
                m_s * c_s(ctx)? * x * (2.0 * alpha * x).exp()
            }
            LossSpec::Logistic => c_s(ctx)? * (2.0 * alpha * x).exp() * x.sqrt().exp_m1(),
            LossSpec::Softplus { s } => {
                c_s(ctx)? * (2.0 * alpha * x).exp() * (x / s).sqrt().exp_m1()
            }
        })
    }
}

fn check_finite(margin: f64) -> Result<()> {
    if margin.is_finite() {
        Ok(())
    } else {
        Err(HtlError::Domain(format!("non-finite margin {margin}")))
    }
}

fn check_psi_arg(x: f64) -> Result<()> {
    if x >= 0.0 && !x.is_nan() {
        Ok(())
    } else {
        Err(HtlError::Domain(format!("Ψ argument must be non-negative, got {x}")))
    }
}

/// `log(1 + e^u)` without overflow.
fn softplus_unit(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}
