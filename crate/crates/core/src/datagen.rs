//! Multivariate Student-t sampling and the rotated-target transfer scenario.
//!
//! Random streams: every draw comes from `ChaCha8Rng::seed_from_u64(seed)`
//! with a fixed stream id per role ([`STREAM_SOURCE`], [`STREAM_TARGET_TRAIN`],
//! [`STREAM_TARGET_TEST`]). Replica `r` of a Monte Carlo loop uses
//! `seed = base_seed + r`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{HtlError, Result};
use crate::htl::Dataset;
use crate::points::Points;

pub const STREAM_SOURCE: u64 = 0;
pub const STREAM_TARGET_TRAIN: u64 = 1;
pub const STREAM_TARGET_TEST: u64 = 2;

/// Degrees of freedom of every class-conditional distribution in the scenario.
pub const SCENARIO_DOF: f64 = 2.5;
/// Isotropic scale of the source classes.
pub const SOURCE_SCALE: f64 = 3.0;

/// Generator for stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A multivariate t distribution `𝒯(μ, Σ, ν)`.
#[derive(Debug, Clone)]
pub struct TComponent {
    mean: DVector<f64>,
    scale: DMatrix<f64>,
    chol: DMatrix<f64>,
    dof: f64,
}

impl TComponent {
    pub fn new(mean: Vec<f64>, scale: DMatrix<f64>, dof: f64) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(HtlError::Dimension { expected: 1, got: 0 });
        }
        if scale.nrows() != d || scale.ncols() != d {
            return Err(HtlError::Dimension {
                expected: d,
                got: scale.nrows(),
            });
        }
        if !(dof > 0.0 && dof.is_finite()) {
            return Err(HtlError::Config(format!("degrees of freedom must be positive, got {dof}")));
        }
        if (&scale - scale.transpose()).amax() > 1e-12 * scale.amax().max(1.0) {
            return Err(HtlError::LinearAlgebra("scale matrix is not symmetric".into()));
        }
        let chol = scale
            .clone()
            .cholesky()
            .ok_or_else(|| HtlError::LinearAlgebra("scale matrix is not positive definite".into()))?
            .l();
        Ok(TComponent {
            mean: DVector::from_vec(mean),
            scale,
            chol,
            dof,
        })
    }

    /// `𝒯(μ, σ² I, ν)`.
    pub fn isotropic(mean: Vec<f64>, variance: f64, dof: f64) -> Result<Self> {
        let d = mean.len();
        TComponent::new(mean, DMatrix::identity(d, d) * variance, dof)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn scale(&self) -> &DMatrix<f64> {
        &self.scale
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }

    fn draw_into<R: Rng + ?Sized>(&self, chi: &ChiSquared<f64>, rng: &mut R, out: &mut Vec<f64>) {
        let d = self.dim();
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let w = chi.sample(rng);
        let x = &self.mean + &self.chol * z * (self.dof / w).sqrt();
        out.extend(x.iter());
    }
}

/// `count` draws `μ + L z √(ν / w)` with `LLᵀ = Σ`, `z ~ N(0, I)` and `w ~ χ²(ν)`.
pub fn sample_t<R: Rng + ?Sized>(component: &TComponent, count: usize, rng: &mut R) -> Result<Points> {
    if count == 0 {
        return Err(HtlError::Config("sample count must be positive".into()));
    }
    let chi = ChiSquared::new(component.dof)
        .map_err(|e| HtlError::Config(format!("chi-square: {e}")))?;
    let mut data = Vec::with_capacity(count * component.dim());
    for _ in 0..count {
        component.draw_into(&chi, rng, &mut data);
    }
    Points::new(component.dim(), data)
}

fn default_r() -> f64 {
    5.0
}
fn default_d_offset() -> f64 {
    5.0
}
fn default_n_source() -> usize {
    10_000
}
fn default_n_target() -> usize {
    100
}
fn default_n_test() -> usize {
    5_000
}

/// Two-class scenario: source classes at `(±r, 0)`, target classes at
/// `±(r + d)(cos θ, sin θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default = "default_r")]
    pub r: f64,
    #[serde(default = "default_d_offset")]
    pub d_offset: f64,
    #[serde(default)]
    pub theta: f64,
    #[serde(default = "default_n_source")]
    pub n_source: usize,
    #[serde(default = "default_n_target")]
    pub n_target: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            r: default_r(),
            d_offset: default_d_offset(),
            theta: 0.0,
            n_source: default_n_source(),
            n_target: default_n_target(),
            n_test: default_n_test(),
            seed: 0,
        }
    }
}

/// Which target sample to draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_source == 0 || self.n_target == 0 || self.n_test == 0 {
            return Err(HtlError::Config("sample sizes must be positive".into()));
        }
        if !(0.0..=std::f64::consts::PI).contains(&self.theta) {
            return Err(HtlError::Config(format!("theta must lie in [0, π], got {}", self.theta)));
        }
        if !(self.r.is_finite() && self.d_offset.is_finite()) {
            return Err(HtlError::Config("r and d_offset must be finite".into()));
        }
        Ok(())
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Centre of the positive target class.
    pub fn target_center(&self) -> [f64; 2] {
        let radius = self.r + self.d_offset;
        [radius * self.theta.cos(), radius * self.theta.sin()]
    }
}

/// Labels `+1` for the first `⌈n/2⌉` samples and `-1` for the rest, with
/// features drawn from the matching class.
fn two_class<R: Rng + ?Sized>(
    pos: &TComponent,
    neg: &TComponent,
    n: usize,
    rng: &mut R,
) -> Result<Dataset> {
    let n_pos = n.div_ceil(2);
    let n_neg = n - n_pos;
    let mut data = sample_t(pos, n_pos, rng)?.as_slice().to_vec();
    if n_neg > 0 {
        data.extend_from_slice(sample_t(neg, n_neg, rng)?.as_slice());
    }
    let labels = (0..n).map(|i| if i < n_pos { 1.0 } else { -1.0 }).collect();
    Dataset::new(Points::new(pos.dim(), data)?, labels)
}

pub fn make_source(cfg: &ScenarioConfig) -> Result<Dataset> {
    cfg.validate()?;
    let pos = TComponent::isotropic(vec![cfg.r, 0.0], SOURCE_SCALE, SCENARIO_DOF)?;
    let neg = TComponent::isotropic(vec![-cfg.r, 0.0], SOURCE_SCALE, SCENARIO_DOF)?;
    two_class(&pos, &neg, cfg.n_source, &mut stream_rng(cfg.seed, STREAM_SOURCE))
}

pub fn make_target(cfg: &ScenarioConfig, split: Split) -> Result<Dataset> {
    cfg.validate()?;
    let [cx, cy] = cfg.target_center();
    let pos = TComponent::isotropic(vec![cx, cy], 1.0, SCENARIO_DOF)?;
    let neg = TComponent::isotropic(vec![-cx, -cy], 1.0, SCENARIO_DOF)?;
    let (n, stream) = match split {
        Split::Train => (cfg.n_target, STREAM_TARGET_TRAIN),
        Split::Test => (cfg.n_test, STREAM_TARGET_TEST),
    };
    two_class(&pos, &neg, n, &mut stream_rng(cfg.seed, stream))
}
