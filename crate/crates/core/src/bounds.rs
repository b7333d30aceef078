//! Theoretical stability certificates: radii of the set the learned
//! correction lives in, hypothesis and pointwise stability parameters, the
//! generalization-gap bound and the excess-risk regularization schedules.

use serde::{Deserialize, Serialize};

use crate::error::{HtlError, Result};
use crate::htl::{per_sample_losses, Dataset, SourceHypothesis};
use crate::losses::LossSpec;

/// Inflation applied to an empirical maximum of source losses.
pub const SOURCE_LOSS_INFLATION: f64 = 1.1;

/// Problem constants shared by every certificate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundContext {
    /// Kernel bound `sup k(x, x')`.
    pub kappa: f64,
    pub lambda: f64,
    /// Target training-set size.
    pub n: usize,
    /// Source risk on the target distribution, estimated on held-out data.
    pub r_hs: f64,
    /// Source risk on the target training set.
    pub r_hs_hat: f64,
    /// Upper bound on the source loss, `sup_z ℓ(h_S, z)`.
    #[serde(default)]
    pub m_s: Option<f64>,
}

impl BoundContext {
    pub fn new(
        kappa: f64,
        lambda: f64,
        n: usize,
        r_hs: f64,
        r_hs_hat: f64,
        m_s: Option<f64>,
    ) -> Result<Self> {
        let ctx = BoundContext {
            kappa,
            lambda,
            n,
            r_hs,
            r_hs_hat,
            m_s,
        };
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(HtlError::Config(format!("{name} must be positive and finite, got {v}")))
            }
        };
        let non_negative = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(HtlError::Config(format!("{name} must be non-negative and finite, got {v}")))
            }
        };
        positive("kappa", self.kappa)?;
        positive("lambda", self.lambda)?;
        non_negative("r_hs", self.r_hs)?;
        non_negative("r_hs_hat", self.r_hs_hat)?;
        if let Some(m) = self.m_s {
            non_negative("m_s", m)?;
        }
        if self.n == 0 {
            return Err(HtlError::Config("n must be positive".into()));
        }
        Ok(())
    }

    /// `κ / λ`.
    pub fn alpha(&self) -> f64 {
        self.kappa / self.lambda
    }

    fn require_m_s(&self) -> Result<f64> {
        self.m_s
            .ok_or_else(|| HtlError::Config("source loss bound M_S is required".into()))
    }
}

/// Sup-norm radius of the learned correction, `√(α R̂[h_S])`.
pub fn radius(ctx: &BoundContext) -> f64 {
    (ctx.alpha() * ctx.r_hs_hat).sqrt()
}

/// Per-index radii of the leave-one-out corrections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LooRadius {
    /// `√(α R̂^{\i}[h_S])`
    pub r_hat: f64,
    /// `max(r̂, r̂^i)`
    pub rho_hat: f64,
    /// `√(α (R̂^{\i}[h_S] + M_S / n))`
    pub tau_hat: f64,
}

/// Leave-one-out radii from the source's per-sample training losses.
pub fn radius_loo(ctx: &BoundContext, source_losses: &[f64]) -> Result<Vec<LooRadius>> {
    let n = source_losses.len();
    if n < 2 {
        return Err(HtlError::Degenerate("leave-one-out radii need n >= 2".into()));
    }
    if n != ctx.n {
        return Err(HtlError::Dimension {
            expected: ctx.n,
            got: n,
        });
    }
    let m_s = ctx.require_m_s()?;
    let alpha = ctx.alpha();
    let full = (alpha * source_losses.iter().sum::<f64>() / n as f64).sqrt();
    let total: f64 = source_losses.iter().sum();
    Ok(source_losses
        .iter()
        .map(|&li| {
            let without = ((total - li) / (n - 1) as f64).max(0.0);
            let r_hat = (alpha * without).sqrt();
            LooRadius {
                r_hat,
                rho_hat: full.max(r_hat),
                tau_hat: (alpha * (without + m_s / n as f64)).sqrt(),
            }
        })
        .collect())
}

/// `C_S = exp{2 + 2αM_S/n + 4α²M_S²/(n - 1)}`.
pub fn c_s(ctx: &BoundContext) -> Result<f64> {
    if ctx.n < 2 {
        return Err(HtlError::Config("C_S needs n >= 2".into()));
    }
    let m = ctx.require_m_s()?;
    let a = ctx.alpha();
    let n = ctx.n as f64;
    Ok((2.0 + 2.0 * a * m / n + 4.0 * a * a * m * m / (n - 1.0)).exp())
}

/// Hypothesis stability `β(n) = α (Ψ₁(𝓡[h_S]) ∧ ‖φ'‖²_∞) / n`.
pub fn beta_bound(loss: &LossSpec, ctx: &BoundContext) -> Result<f64> {
    let psi = loss.psi1(ctx.r_hs, ctx)?;
    Ok(ctx.alpha() * loss.derivative_sup().cap_squared(psi, 1.0) / ctx.n as f64)
}

/// Pointwise hypothesis stability `γ(n) = α (Ψ₂(𝓡[h_S]) ∧ ‖φ'‖²_∞) / n`.
pub fn gamma_bound(loss: &LossSpec, ctx: &BoundContext) -> Result<f64> {
    let psi = loss.psi2(ctx.r_hs, ctx)?;
    Ok(ctx.alpha() * loss.derivative_sup().cap_squared(psi, 1.0) / ctx.n as f64)
}

/// Generalization-gap bound: the smaller of `β + γ` and
/// `α ((Ψ₁ + Ψ₂)(𝓡[h_S]) ∧ 2‖φ'‖²_∞) / n`.
///
/// The two agree unless exactly one of Ψ₁, Ψ₂ exceeds the cap.
pub fn gen_gap_bound(loss: &LossSpec, ctx: &BoundContext) -> Result<f64> {
    let psi = loss.psi1(ctx.r_hs, ctx)? + loss.psi2(ctx.r_hs, ctx)?;
    let joint = ctx.alpha() * loss.derivative_sup().cap_squared(psi, 2.0) / ctx.n as f64;
    Ok(joint.min(beta_bound(loss, ctx)? + gamma_bound(loss, ctx)?))
}

/// A regularization level together with the excess-risk rate it attains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcessSchedule {
    pub lambda: f64,
    pub rate_label: String,
}

fn schedule(lambda: f64, label: &str) -> ExcessSchedule {
    ExcessSchedule {
        lambda,
        rate_label: label.to_string(),
    }
}

/// Regularization level balancing stability against approximation.
///
/// A zero source risk makes the logarithmic and square-root schedules
/// degenerate; the loss-specific unconditional choice is returned instead
/// (`1/√n` for the quadratic losses, `ln²n/√n` for the exponential loss).
pub fn excess_lambda_schedule(
    loss: &LossSpec,
    n: usize,
    r_hs: f64,
    m_s: Option<f64>,
) -> Result<ExcessSchedule> {
    if n < 2 {
        return Err(HtlError::Config("the excess-risk schedule needs n >= 2".into()));
    }
    if !(r_hs >= 0.0 && r_hs.is_finite()) {
        return Err(HtlError::Config(format!("source risk must be non-negative, got {r_hs}")));
    }
    let nf = n as f64;
    let ln_n = nf.ln();
    let sqrt_n = nf.sqrt();
    Ok(match *loss {
        LossSpec::Mse | LossSpec::SquaredHinge => {
            if r_hs > 0.0 {
                schedule((r_hs / sqrt_n).sqrt(), "sqrt(R/sqrt n)")
            } else {
                schedule(1.0 / sqrt_n, "1/√n")
            }
        }
        LossSpec::Exponential => {
            let m = m_s.ok_or_else(|| {
                HtlError::Config("the exponential schedule requires the source loss bound M_S".into())
            })?;
            if r_hs > 0.0 && nf >= m * m * ln_n * ln_n / r_hs {
                schedule(4.0 * r_hs.sqrt().min(1.0) / ln_n, "(√R ∧1)/ln n")
            } else {
                schedule(ln_n * ln_n / sqrt_n, "ln²n/√n")
            }
        }
        LossSpec::Logistic | LossSpec::Softplus { .. } => {
            let temperature_ok = match *loss {
                LossSpec::Softplus { s } => r_hs > 0.0 && 1.0 / s <= -r_hs.ln(),
                _ => true,
            };
            if n >= 9 && r_hs > 0.0 && r_hs <= 1.0 / sqrt_n && temperature_ok {
                schedule(8.0 / (-nf * r_hs.ln()).sqrt(), "1/√(−n ln R)")
            } else {
                schedule(1.0 / sqrt_n, "1/√n")
            }
        }
    })
}

/// `sup_z ℓ(h_S, z)`.
///
/// For losses that decrease in the margin and a source with a known sup-norm
/// `H`, this is `φ(-H)`. Otherwise it is the largest per-sample source loss on
/// `pooled`, inflated by [`SOURCE_LOSS_INFLATION`].
pub fn estimate_source_loss_sup(
    loss: &LossSpec,
    source: &SourceHypothesis,
    pooled: &Dataset,
) -> Result<f64> {
    let analytic = matches!(
        loss,
        LossSpec::Logistic | LossSpec::Softplus { .. } | LossSpec::Mse | LossSpec::SquaredHinge
    );
    if let (true, Some(h)) = (analytic, source.sup_norm_hint) {
        return loss.value(-h);
    }
    let worst = per_sample_losses(source, pooled, loss)?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(worst * SOURCE_LOSS_INFLATION)
}

/// Every certificate for one loss and context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityBoundReport {
    pub loss: LossSpec,
    #[serde(flatten)]
    pub context: BoundContext,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub gen_gap: f64,
    /// Present when `M_S` is known and `n >= 2`.
    pub c_s: Option<f64>,
    pub radius: f64,
    /// Leave-one-out radii `(r̂^i, ρ̂^i)`, present when per-sample source losses were supplied.
    pub radius_loo: Vec<[f64; 2]>,
    pub tau_loo: Vec<f64>,
    pub excess_schedule: ExcessSchedule,
}

impl StabilityBoundReport {
    pub fn compute(
        loss: &LossSpec,
        ctx: &BoundContext,
        source_losses: Option<&[f64]>,
    ) -> Result<Self> {
        ctx.validate()?;
        loss.validate()?;
        let (radius_loo, tau_loo) = match source_losses {
            Some(l) => radius_loo(ctx, l)?
                .into_iter()
                .map(|r| ([r.r_hat, r.rho_hat], r.tau_hat))
                .unzip(),
            None => (Vec::new(), Vec::new()),
        };
        let c = match (ctx.m_s, ctx.n >= 2) {
            (Some(_), true) => Some(c_s(ctx)?),
            _ => None,
        };
        Ok(StabilityBoundReport {
            loss: *loss,
            context: *ctx,
            alpha: ctx.alpha(),
            beta: beta_bound(loss, ctx)?,
            gamma: gamma_bound(loss, ctx)?,
            gen_gap: gen_gap_bound(loss, ctx)?,
            c_s: c,
            radius: radius(ctx),
            radius_loo,
            tau_loo,
            excess_schedule: excess_lambda_schedule(loss, ctx.n.max(2), ctx.r_hs, ctx.m_s)?,
        })
    }
}
