//! Negative-transfer sweep: held-out risk of the transfer learner as the
//! target task rotates away from the source task.

use std::f64::consts::PI;
use std::io::Write;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{make_source, make_target, ScenarioConfig, Split};
use crate::error::{HtlError, Result};
use crate::htl::{empirical_risk, SourceHypothesis};
use crate::kernel::KernelSpec;
use crate::losses::LossSpec;
use crate::rerm::{fit, fit_linear_weights, SolverConfig};

/// Fraction of replicas that must succeed for a curve point to be reported.
pub const MIN_SUCCESS_FRACTION: f64 = 0.9;

pub const CSV_HEADER: [&str; 6] = ["theta", "loss", "median_risk", "q25", "q75", "n_sims"];

/// How the source hypothesis is trained on the source sample: a primal
/// linear scorer minimizing a regularized surrogate risk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceTrainer {
    #[serde(default = "default_source_loss")]
    pub loss: LossSpec,
    #[serde(default = "default_source_lambda")]
    pub lambda: f64,
}

fn default_source_loss() -> LossSpec {
    LossSpec::SquaredHinge
}
fn default_source_lambda() -> f64 {
    1e-3
}

impl Default for SourceTrainer {
    fn default() -> Self {
        SourceTrainer {
            loss: default_source_loss(),
            lambda: default_source_lambda(),
        }
    }
}

impl SourceTrainer {
    pub fn train(&self, source: &crate::htl::Dataset, cfg: &SolverConfig) -> Result<SourceHypothesis> {
        let (w, _) = fit_linear_weights(source, &self.loss, self.lambda, cfg)?;
        Ok(SourceHypothesis::linear(w.iter().copied().collect()))
    }
}

/// `k` equally spaced angles covering `[0, π]`.
pub fn theta_grid(k: usize) -> Vec<f64> {
    match k {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..k).map(|i| PI * i as f64 / (k - 1) as f64).collect(),
    }
}

fn default_losses() -> Vec<LossSpec> {
    vec![
        LossSpec::Exponential,
        LossSpec::Logistic,
        LossSpec::Mse,
        LossSpec::SquaredHinge,
        LossSpec::Softplus { s: 0.1 },
    ]
}
fn default_lambda() -> f64 {
    1.0
}
fn default_theta_grid() -> Vec<f64> {
    theta_grid(17)
}
fn default_n_sims() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub scenario: ScenarioConfig,
    #[serde(default = "default_losses")]
    pub losses: Vec<LossSpec>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Kernel of the target learner.
    #[serde(default = "KernelSpec::linear")]
    pub kernel: KernelSpec,
    #[serde(default = "default_theta_grid")]
    pub theta_grid: Vec<f64>,
    #[serde(default = "default_n_sims")]
    pub n_sims: usize,
    #[serde(default)]
    pub source_trainer: SourceTrainer,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: ScenarioConfig::default(),
            losses: default_losses(),
            lambda: default_lambda(),
            kernel: KernelSpec::linear(),
            theta_grid: default_theta_grid(),
            n_sims: default_n_sims(),
            source_trainer: SourceTrainer::default(),
            solver: SolverConfig::default(),
            output_path: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.losses.is_empty() {
            return Err(HtlError::Config("at least one loss is required".into()));
        }
        for loss in &self.losses {
            loss.validate()?;
        }
        self.source_trainer.loss.validate()?;
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(HtlError::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.source_trainer.lambda > 0.0) {
            return Err(HtlError::Config("source lambda must be positive".into()));
        }
        if self.theta_grid.is_empty() {
            return Err(HtlError::Config("theta_grid must not be empty".into()));
        }
        if let Some(t) = self.theta_grid.iter().find(|t| !(0.0..=PI).contains(*t)) {
            return Err(HtlError::Config(format!("theta {t} is outside [0, π]")));
        }
        if self.n_sims == 0 {
            return Err(HtlError::Config("n_sims must be positive".into()));
        }
        self.kernel.validate()?;
        self.solver.validate()
    }
}

/// One point of a risk curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub theta: f64,
    pub loss: String,
    pub median_risk: f64,
    pub q25: f64,
    pub q75: f64,
    /// Replicas that contributed.
    pub n_sims: usize,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Held-out risks of one replica, indexed `[theta][loss]`.
fn run_replica(cfg: &ExperimentConfig, seed: u64) -> Vec<Vec<Result<f64>>> {
    let failed = |e: &HtlError| {
        cfg.theta_grid
            .iter()
            .map(|_| cfg.losses.iter().map(|_| Err(HtlError::Degenerate(e.to_string()))).collect())
            .collect()
    };
    let scenario = cfg.scenario.with_seed(seed);
    let source = match make_source(&scenario).and_then(|s| cfg.source_trainer.train(&s, &cfg.solver)) {
        Ok(h) => h,
        Err(e) => {
            warn!("replica seed {seed}: source training failed: {e}");
            return failed(&e);
        }
    };
    cfg.theta_grid
        .iter()
        .map(|&theta| {
            let sc = scenario.with_theta(theta);
            let data = make_target(&sc, Split::Train).and_then(|tr| Ok((tr, make_target(&sc, Split::Test)?)));
            let (train, test) = match data {
                Ok(d) => d,
                Err(e) => return cfg.losses.iter().map(|_| Err(HtlError::Degenerate(e.to_string()))).collect(),
            };
            cfg.losses
                .iter()
                .map(|loss| {
                    let model = fit(&train, loss, &cfg.kernel, cfg.lambda, &source, &cfg.solver)?;
                    empirical_risk(&model, &test, loss)
                })
                .collect()
        })
        .collect()
}

/// Runs every replica and summarizes each `(theta, loss)` cell.
///
/// Replica `r` uses seed `scenario.seed + r` for its source sample and for the
/// target samples at every angle, so curves share their noise across angles.
pub fn run_negative_transfer(cfg: &ExperimentConfig) -> Result<Vec<CurveRow>> {
    cfg.validate()?;
    let per_replica: Vec<Vec<Vec<Result<f64>>>> = (0..cfg.n_sims as u64)
        .into_par_iter()
        .map(|r| run_replica(cfg, cfg.scenario.seed.wrapping_add(r)))
        .collect();
    let needed = (MIN_SUCCESS_FRACTION * cfg.n_sims as f64).ceil() as usize;
    let mut rows = Vec::with_capacity(cfg.theta_grid.len() * cfg.losses.len());
    for (t, &theta) in cfg.theta_grid.iter().enumerate() {
        for (l, loss) in cfg.losses.iter().enumerate() {
            let mut risks: Vec<f64> = Vec::with_capacity(cfg.n_sims);
            let mut last_err = None;
            for rep in &per_replica {
                match &rep[t][l] {
                    Ok(v) if !v.is_nan() => risks.push(*v),
                    Ok(_) => last_err = Some("NaN risk".to_string()),
                    Err(e) => last_err = Some(e.to_string()),
                }
            }
            if risks.len() < needed {
                return Err(HtlError::Degenerate(format!(
                    "theta={theta} loss={}: only {}/{} replicas succeeded (last error: {})",
                    loss.name(),
                    risks.len(),
                    cfg.n_sims,
                    last_err.unwrap_or_default()
                )));
            }
            if risks.len() < cfg.n_sims {
                warn!(
                    "theta={theta} loss={}: {} replicas failed",
                    loss.name(),
                    cfg.n_sims - risks.len()
                );
            }
            risks.sort_by(f64::total_cmp);
            rows.push(CurveRow {
                theta,
                loss: loss.name().to_string(),
                median_risk: quantile(&risks, 0.5),
                q25: quantile(&risks, 0.25),
                q75: quantile(&risks, 0.75),
                n_sims: risks.len(),
            });
        }
    }
    info!("negative transfer: {} rows from {} replicas", rows.len(), cfg.n_sims);
    Ok(rows)
}

pub fn write_curve_csv<W: Write>(rows: &[CurveRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| HtlError::Parse(e.to_string());
    w.write_record(CSV_HEADER).map_err(err)?;
    for r in rows {
        w.write_record([
            r.theta.to_string(),
            r.loss.clone(),
            r.median_risk.to_string(),
            r.q25.to_string(),
            r.q75.to_string(),
            r.n_sims.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| HtlError::Parse(e.to_string()))
}

pub fn curve_csv_bytes(rows: &[CurveRow]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_curve_csv(rows, &mut buf)?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            scenario: ScenarioConfig {
                n_source: 200,
                n_target: 20,
                n_test: 100,
                seed: 11,
                ..ScenarioConfig::default()
            },
            theta_grid: theta_grid(3),
            n_sims: 4,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn grid() {
        let g = theta_grid(17);
        assert_eq!(g.len(), 17);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[16], PI);
        assert_eq!(theta_grid(1), vec![0.0]);
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.25), 2.0);
        assert_eq!(quantile(&[1.0, 2.0], 0.5), 1.5);
        assert_eq!(quantile(&[7.0], 0.75), 7.0);
    }

    #[test]
    fn config_round_trip_and_defaults() {
        let cfg = tiny();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&json).unwrap(), cfg);
        let d: ExperimentConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(d, ExperimentConfig::default());
        assert_eq!(d.theta_grid.len(), 17);
        assert_eq!(d.lambda, 1.0);
        assert_eq!(d.n_sims, 1000);
        let bad = ExperimentConfig {
            theta_grid: vec![4.0],
            ..tiny()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn rows_and_csv() {
        let cfg = tiny();
        let rows = run_negative_transfer(&cfg).unwrap();
        assert_eq!(rows.len(), 3 * 5);
        for r in &rows {
            assert!(r.q25 <= r.median_risk && r.median_risk <= r.q75);
            assert_eq!(r.n_sims, 4);
        }
        let bytes = curve_csv_bytes(&rows).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("theta,loss,median_risk,q25,q75,n_sims\n"));
        assert_eq!(curve_csv_bytes(&run_negative_transfer(&cfg).unwrap()).unwrap(), bytes);
    }

    #[test]
    fn failing_replicas_fail_the_run() {
        let cfg = ExperimentConfig {
            solver: SolverConfig {
                max_iters: 1,
                ..SolverConfig::default()
            },
            ..tiny()
        };
        assert!(run_negative_transfer(&cfg).is_err());
    }
}
