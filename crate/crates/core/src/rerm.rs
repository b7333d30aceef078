//! Regularized empirical risk minimization with a frozen source offset.
//!
//! By the representer theorem the minimizer of
//!
//! ```text
//! (1/n) Σ_i φ((ĥ(X_i) + h_S(X_i)) Y_i) + λ ‖ĥ‖²_k
//! ```
//!
//! is `ĥ = Σ_j a_j k(X_j, ·)`, so the problem is solved over the coefficient
//! vector `a`:
//!
//! ```text
//! F(a) = w Σ_i φ(m_i) + λ aᵀGa,    m_i = ((Ga)_i + h_S(X_i)) Y_i,
//! ```
//!
//! with `w = 1/n`. The gradient is `∇F(a) = G r(a)` where
//! `r(a) = w (y ⊙ φ'(m)) + 2λa`; `r(a) = 0` is the function-space optimality
//! condition and is what convergence is declared on.
//!
//! Search directions are Newton steps on the system `r(a) = 0`, whose
//! Jacobian `w diag(φ''(m)) G + 2λI` is invertible even when `G` is singular,
//! or plain functional-gradient steps `-r`. Both are globalized by a
//! backtracking line search on `F`.

use log::{debug, trace};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{HtlError, Result};
use crate::htl::{Dataset, FittedModel, SolverStats, SourceHypothesis};
use crate::kernel::KernelSpec;
use crate::losses::LossSpec;

/// Line-search attempts before declaring stagnation.
const MAX_BACKTRACKS: usize = 80;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DescentMethod {
    /// Damped Newton steps on the optimality system.
    #[default]
    Newton,
    /// Functional gradient descent, direction `-r(a)`.
    Gradient,
}

/// Loss weight used when a leave-one-out fold is refit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FoldWeighting {
    /// Keep the parent's `1/n` weight on each of the `n - 1` remaining losses.
    #[default]
    FullSample,
    /// Refit as a fresh `n - 1` sample problem with weight `1/(n - 1)`.
    Reduced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Tolerance on `‖w (y ⊙ φ'(m)) + 2λa‖₂`.
    pub grad_tol: f64,
    pub shrink: f64,
    pub sufficient_decrease: f64,
    pub method: DescentMethod,
    pub fold_weighting: FoldWeighting,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iters: 5000,
            grad_tol: 1e-8,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
            method: DescentMethod::Newton,
            fold_weighting: FoldWeighting::FullSample,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(HtlError::Config("max_iters must be positive".into()));
        }
        if !(self.grad_tol > 0.0) {
            return Err(HtlError::Config("grad_tol must be positive".into()));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(HtlError::Config("shrink must lie in (0, 1)".into()));
        }
        if !(self.sufficient_decrease > 0.0 && self.sufficient_decrease < 1.0) {
            return Err(HtlError::Config("sufficient_decrease must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Backtracking from a unit step until the Armijo condition holds.
///
/// `eval(t)` returns `F(x + t p)`; `slope` is the directional derivative at `t = 0`.
fn backtrack(
    f0: f64,
    slope: f64,
    t0: f64,
    cfg: &SolverConfig,
    mut eval: impl FnMut(f64) -> f64,
) -> Option<(f64, f64)> {
    // rounding-level slack so that steps along flat directions are not rejected
    let slack = 8.0 * f64::EPSILON * f0.abs();
    let mut t = t0;
    for _ in 0..MAX_BACKTRACKS {
        let f = eval(t);
        if f.is_finite() && f <= f0 + cfg.sufficient_decrease * t * slope + slack {
            return Some((t, f));
        }
        t *= cfg.shrink;
    }
    None
}

/// The coefficient-space objective for one training set.
#[derive(Debug, Clone)]
struct Objective {
    gram: DMatrix<f64>,
    offsets: DVector<f64>,
    labels: DVector<f64>,
    loss: LossSpec,
    lambda: f64,
    /// Loss terms are averaged with this denominator.
    denom: f64,
}

struct Iterate {
    a: DVector<f64>,
    ga: DVector<f64>,
    margins: DVector<f64>,
    value: f64,
}

impl Objective {
    fn check(&self) -> Result<()> {
        let n = self.gram.nrows();
        if self.gram.ncols() != n {
            return Err(HtlError::Dimension {
                expected: n,
                got: self.gram.ncols(),
            });
        }
        for len in [self.offsets.len(), self.labels.len()] {
            if len != n {
                return Err(HtlError::Dimension { expected: n, got: len });
            }
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(HtlError::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        self.loss.validate()
    }

    fn margins(&self, ga: &DVector<f64>) -> DVector<f64> {
        (ga + &self.offsets).component_mul(&self.labels)
    }

    fn value(&self, a: &DVector<f64>, ga: &DVector<f64>, margins: &DVector<f64>) -> f64 {
        let data: f64 = margins.iter().map(|&m| self.loss.value_unchecked(m)).sum();
        data / self.denom + self.lambda * a.dot(ga)
    }

    fn iterate(&self, a: DVector<f64>) -> Iterate {
        let ga = &self.gram * &a;
        let margins = self.margins(&ga);
        let value = self.value(&a, &ga, &margins);
        Iterate {
            a,
            ga,
            margins,
            value,
        }
    }

    fn residual(&self, a: &DVector<f64>, margins: &DVector<f64>) -> DVector<f64> {
        let dphi = margins.map(|m| self.loss.derivative_unchecked(m));
        dphi.component_mul(&self.labels) / self.denom + a * (2.0 * self.lambda)
    }

    fn newton_direction(&self, margins: &DVector<f64>, r: &DVector<f64>) -> Option<DVector<f64>> {
        let n = r.len();
        let curv = margins.map(|m| self.loss.second_derivative(m) / self.denom);
        if curv.iter().any(|c| !c.is_finite()) {
            return None;
        }
        let mut jac = DMatrix::from_fn(n, n, |i, j| curv[i] * self.gram[(i, j)]);
        for i in 0..n {
            jac[(i, i)] += 2.0 * self.lambda;
        }
        let step = jac.lu().solve(r)?;
        if step.iter().all(|v| v.is_finite()) {
            Some(-step)
        } else {
            None
        }
    }

    fn minimize(&self, init: DVector<f64>, cfg: &SolverConfig) -> Result<(DVector<f64>, SolverStats)> {
        self.minimize_traced(init, cfg, &mut |_| {})
    }

    fn minimize_traced(
        &self,
        init: DVector<f64>,
        cfg: &SolverConfig,
        on_iter: &mut dyn FnMut(f64),
    ) -> Result<(DVector<f64>, SolverStats)> {
        cfg.validate()?;
        let mut it = self.iterate(init);
        if !it.value.is_finite() {
            return Err(HtlError::Domain(
                "objective is not finite at the starting point".into(),
            ));
        }
        let mut gd_step: f64 = 1.0;
        for iter in 0..cfg.max_iters {
            on_iter(it.value);
            let r = self.residual(&it.a, &it.margins);
            let res_norm = r.norm();
            debug!(
                target: "htl::rerm",
                "iter={iter} objective={:.12e} residual={res_norm:.3e}",
                it.value
            );
            if !res_norm.is_finite() {
                return Err(HtlError::Domain("non-finite optimality residual".into()));
            }
            if res_norm <= cfg.grad_tol {
                return Ok((
                    it.a,
                    SolverStats {
                        iterations: iter,
                        residual_norm: res_norm,
                        objective: it.value,
                    },
                ));
            }

            let mut candidates: Vec<(DVector<f64>, bool)> = Vec::with_capacity(2);
            if cfg.method == DescentMethod::Newton {
                if let Some(p) = self.newton_direction(&it.margins, &r) {
                    candidates.push((p, true));
                }
            }
            candidates.push((-r.clone(), false));

            let mut moved = false;
            for (p, is_newton) in candidates {
                let gp = &self.gram * &p;
                let slope = r.dot(&gp);
                if slope > 0.0 {
                    continue;
                }
                let t0 = if is_newton { 1.0 } else { (2.0 * gd_step).min(1.0) };
                let eval = |t: f64| {
                    let a = &it.a + &p * t;
                    let ga = &it.ga + &gp * t;
                    let m = self.margins(&ga);
                    self.value(&a, &ga, &m)
                };
                if let Some((t, f)) = backtrack(it.value, slope, t0, cfg, eval) {
                    trace!(target: "htl::rerm", "step={t:.3e} newton={is_newton}");
                    if !is_newton {
                        gd_step = t;
                    }
                    let a = &it.a + &p * t;
                    let ga = &it.ga + &gp * t;
                    let margins = self.margins(&ga);
                    it = Iterate {
                        a,
                        ga,
                        margins,
                        value: f,
                    };
                    moved = true;
                    break;
                }
            }
            if !moved {
                return Err(HtlError::Convergence {
                    iterations: iter,
                    residual: res_norm,
                    fold: None,
                });
            }
        }
        let r = self.residual(&it.a, &it.margins);
        let res_norm = r.norm();
        if res_norm <= cfg.grad_tol {
            return Ok((
                it.a,
                SolverStats {
                    iterations: cfg.max_iters,
                    residual_norm: res_norm,
                    objective: it.value,
                },
            ));
        }
        Err(HtlError::Convergence {
            iterations: cfg.max_iters,
            residual: res_norm,
            fold: None,
        })
    }
}

fn objective_for(
    gram: &DMatrix<f64>,
    source_scores: &DVector<f64>,
    labels: &DVector<f64>,
    loss: &LossSpec,
    lambda: f64,
) -> Result<Objective> {
    let obj = Objective {
        gram: gram.clone(),
        offsets: source_scores.clone(),
        labels: labels.clone(),
        loss: *loss,
        lambda,
        denom: gram.nrows().max(1) as f64,
    };
    obj.check()?;
    Ok(obj)
}

/// `F(a) = (1/n) Σ φ(((Ga)_i + h_S(X_i)) Y_i) + λ aᵀGa`.
pub fn objective(
    coeffs: &DVector<f64>,
    gram: &DMatrix<f64>,
    source_scores: &DVector<f64>,
    labels: &DVector<f64>,
    loss: &LossSpec,
    lambda: f64,
) -> Result<f64> {
    let obj = objective_for(gram, source_scores, labels, loss, lambda)?;
    if coeffs.len() != gram.nrows() {
        return Err(HtlError::Dimension {
            expected: gram.nrows(),
            got: coeffs.len(),
        });
    }
    Ok(obj.iterate(coeffs.clone()).value)
}

/// `∇F(a) = G [(1/n)(y ⊙ φ'(m)) + 2λa]`.
pub fn gradient(
    coeffs: &DVector<f64>,
    gram: &DMatrix<f64>,
    source_scores: &DVector<f64>,
    labels: &DVector<f64>,
    loss: &LossSpec,
    lambda: f64,
) -> Result<DVector<f64>> {
    let obj = objective_for(gram, source_scores, labels, loss, lambda)?;
    if coeffs.len() != gram.nrows() {
        return Err(HtlError::Dimension {
            expected: gram.nrows(),
            got: coeffs.len(),
        });
    }
    let ga = gram * coeffs;
    let r = obj.residual(coeffs, &obj.margins(&ga));
    Ok(gram * r)
}

/// The optimality residual `(1/n)(y ⊙ φ'(m)) + 2λa` of a model on its training set.
pub fn optimality_residual(model: &FittedModel, train: &Dataset) -> Result<DVector<f64>> {
    let problem = TrainingProblem::from_model(model, train)?;
    let obj = match model.omitted_index {
        None => problem.full_objective(),
        Some(_) => {
            return Err(HtlError::Config(
                "residual of a fold model is defined on its parent problem".into(),
            ))
        }
    };
    let a = model.coeff_vector();
    let ga = &obj.gram * &a;
    Ok(obj.residual(&a, &obj.margins(&ga)))
}

/// A training set with its Gram matrix and source offsets, shared by the full
/// fit and all of its leave-one-out refits.
#[derive(Debug, Clone)]
pub struct TrainingProblem {
    train: Dataset,
    kernel: KernelSpec,
    loss: LossSpec,
    lambda: f64,
    source: SourceHypothesis,
    gram: DMatrix<f64>,
    offsets: DVector<f64>,
    labels: DVector<f64>,
}

/// Coefficients and diagnostics from one solve.
#[derive(Debug, Clone)]
pub struct Solution {
    pub coeffs: DVector<f64>,
    pub stats: SolverStats,
}

impl TrainingProblem {
    pub fn new(
        train: &Dataset,
        loss: &LossSpec,
        kernel: &KernelSpec,
        lambda: f64,
        source: &SourceHypothesis,
    ) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(HtlError::Config(format!("lambda must be positive, got {lambda}")));
        }
        loss.validate()?;
        kernel.validate()?;
        let gram = kernel.gram(train.features())?;
        let offsets = DVector::from_vec(source.scores(train.features())?);
        if let Some(bad) = offsets.iter().find(|v| !v.is_finite()) {
            return Err(HtlError::Domain(format!("source score {bad} is not finite")));
        }
        Ok(TrainingProblem {
            train: train.clone(),
            kernel: *kernel,
            loss: *loss,
            lambda,
            source: source.clone(),
            gram,
            offsets,
            labels: DVector::from_column_slice(train.labels()),
        })
    }

    /// Rebuilds the problem a full-data model was fit on.
    pub fn from_model(model: &FittedModel, train: &Dataset) -> Result<Self> {
        if model.omitted_index.is_none() && model.train_features != *train.features() {
            return Err(HtlError::Config(
                "dataset does not match the model's training features".into(),
            ));
        }
        TrainingProblem::new(train, &model.loss, &model.kernel, model.lambda, &model.source)
    }

    pub fn n(&self) -> usize {
        self.train.n()
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn offsets(&self) -> &DVector<f64> {
        &self.offsets
    }

    pub fn train(&self) -> &Dataset {
        &self.train
    }

    pub fn loss(&self) -> &LossSpec {
        &self.loss
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    fn full_objective(&self) -> Objective {
        Objective {
            gram: self.gram.clone(),
            offsets: self.offsets.clone(),
            labels: self.labels.clone(),
            loss: self.loss,
            lambda: self.lambda,
            denom: self.n() as f64,
        }
    }

    fn fold_objective(&self, i: usize, weighting: FoldWeighting) -> Objective {
        let n = self.n();
        let denom = match weighting {
            FoldWeighting::FullSample => n as f64,
            FoldWeighting::Reduced => (n - 1) as f64,
        };
        Objective {
            gram: self.gram.clone().remove_row(i).remove_column(i),
            offsets: self.offsets.clone().remove_row(i),
            labels: self.labels.clone().remove_row(i),
            loss: self.loss,
            lambda: self.lambda,
            denom,
        }
    }

    pub fn solve_full(&self, cfg: &SolverConfig) -> Result<Solution> {
        let (coeffs, stats) = self
            .full_objective()
            .minimize(DVector::zeros(self.n()), cfg)?;
        Ok(Solution { coeffs, stats })
    }

    /// Refit without sample `i`, warm-started from `full_coeffs` with entry `i` dropped.
    pub fn solve_fold(&self, i: usize, full_coeffs: &DVector<f64>, cfg: &SolverConfig) -> Result<Solution> {
        let n = self.n();
        if n < 2 {
            return Err(HtlError::Degenerate("leave-one-out needs n >= 2".into()));
        }
        if i >= n {
            return Err(HtlError::Dimension { expected: n, got: i });
        }
        let init = full_coeffs.clone().remove_row(i);
        let (coeffs, stats) = self
            .fold_objective(i, cfg.fold_weighting)
            .minimize(init, cfg)
            .map_err(|e| e.in_fold(i))?;
        Ok(Solution { coeffs, stats })
    }

    /// Fold coefficients placed back on the full index set, with 0 at `i`.
    pub fn embed(&self, i: usize, fold_coeffs: &DVector<f64>) -> DVector<f64> {
        fold_coeffs.clone().insert_row(i, 0.0)
    }

    /// Margin of the fold-`i` learner at the removed sample `Z_i`.
    pub fn fold_margin_at_removed(&self, i: usize, fold_coeffs: &DVector<f64>) -> f64 {
        let emb = self.embed(i, fold_coeffs);
        (self.gram.column(i).dot(&emb) + self.offsets[i]) * self.labels[i]
    }

    /// Margins of a full-index coefficient vector on the training set.
    pub fn margins(&self, coeffs: &DVector<f64>) -> DVector<f64> {
        (&self.gram * coeffs + &self.offsets).component_mul(&self.labels)
    }

    /// `‖Σ_j u_j k(X_j, ·)‖_k` for a full-index vector `u`.
    pub fn rkhs_norm(&self, u: &DVector<f64>) -> f64 {
        u.dot(&(&self.gram * u)).max(0.0).sqrt()
    }

    pub fn to_model(&self, solution: &Solution, omitted: Option<usize>) -> FittedModel {
        let train_features = match omitted {
            Some(i) => self.train.features().without(i),
            None => self.train.features().clone(),
        };
        FittedModel {
            coeffs: solution.coeffs.iter().copied().collect(),
            train_features,
            kernel: self.kernel,
            lambda: self.lambda,
            loss: self.loss,
            source: self.source.clone(),
            solver_stats: solution.stats,
            omitted_index: omitted,
        }
    }
}

/// Fits `𝒜 = ĥ + h_S` on `train`.
pub fn fit(
    train: &Dataset,
    loss: &LossSpec,
    kernel: &KernelSpec,
    lambda: f64,
    source: &SourceHypothesis,
    cfg: &SolverConfig,
) -> Result<FittedModel> {
    let problem = TrainingProblem::new(train, loss, kernel, lambda, source)?;
    let sol = problem.solve_full(cfg)?;
    Ok(problem.to_model(&sol, None))
}

/// Refits `model` on `train` with sample `i` removed.
pub fn refit_without(
    model: &FittedModel,
    train: &Dataset,
    i: usize,
    cfg: &SolverConfig,
) -> Result<FittedModel> {
    let problem = TrainingProblem::from_model(model, train)?;
    let full = model.coeff_vector();
    let sol = problem.solve_fold(i, &full, cfg)?;
    Ok(problem.to_model(&sol, Some(i)))
}

/// `‖ĥ_a - ĥ_b‖_k`. A leave-one-out model is compared on its parent's index
/// set, with coefficient 0 at the removed sample.
pub fn rkhs_distance(model_a: &FittedModel, model_b: &FittedModel) -> Result<f64> {
    if model_a.kernel != model_b.kernel {
        return Err(HtlError::Config("models use different kernels".into()));
    }
    let (full, other) = match (model_a.omitted_index, model_b.omitted_index) {
        (None, _) => (model_a, model_b),
        (Some(_), None) => (model_b, model_a),
        (Some(_), Some(_)) => {
            if model_a.train_features != model_b.train_features
                || model_a.omitted_index != model_b.omitted_index
            {
                return Err(HtlError::Config(
                    "two fold models must share their training set".into(),
                ));
            }
            (model_a, model_b)
        }
    };
    let b = match other.omitted_index {
        Some(i) if full.omitted_index.is_none() => {
            if other.train_features != full.train_features.without(i) {
                return Err(HtlError::Config(
                    "fold model is not a refit of the full model's training set".into(),
                ));
            }
            other.coeff_vector().insert_row(i, 0.0)
        }
        _ => {
            if other.train_features != full.train_features {
                return Err(HtlError::Config("models have different training sets".into()));
            }
            other.coeff_vector()
        }
    };
    let g = full.kernel.gram(&full.train_features)?;
    let diff = full.coeff_vector() - b;
    Ok(diff.dot(&(g * &diff)).max(0.0).sqrt())
}

/// Closed-form biased ridge regression, `argmin_u (1/n)‖Xu + s - y‖² + λ‖u‖²`.
pub fn ridge_oracle(train: &Dataset, lambda: f64, source_scores: &[f64]) -> Result<DVector<f64>> {
    if !(lambda > 0.0) {
        return Err(HtlError::Config(format!("lambda must be positive, got {lambda}")));
    }
    if source_scores.len() != train.n() {
        return Err(HtlError::Dimension {
            expected: train.n(),
            got: source_scores.len(),
        });
    }
    let n = train.n() as f64;
    let x = train.features().to_matrix();
    let target = DVector::from_iterator(
        train.n(),
        train.labels().iter().zip(source_scores).map(|(y, s)| y - s),
    );
    let d = x.ncols();
    let lhs = x.transpose() * &x / n + DMatrix::identity(d, d) * lambda;
    let rhs = x.transpose() * target / n;
    let chol = lhs
        .cholesky()
        .ok_or_else(|| HtlError::LinearAlgebra("ridge normal equations are not positive definite".into()))?;
    Ok(chol.solve(&rhs))
}

/// Primal fit of a linear scorer `x ↦ ⟨w, x⟩`, minimizing `(1/n) Σ φ(⟨w, X_i⟩ Y_i) + λ‖w‖²`.
///
/// Equivalent to [`fit`] with a linear kernel and a zero source, but with cost
/// independent of `n` per solve, which suits large source samples.
pub fn fit_linear_weights(
    train: &Dataset,
    loss: &LossSpec,
    lambda: f64,
    cfg: &SolverConfig,
) -> Result<(DVector<f64>, SolverStats)> {
    cfg.validate()?;
    loss.validate()?;
    if !(lambda > 0.0) {
        return Err(HtlError::Config(format!("lambda must be positive, got {lambda}")));
    }
    let x = train.features().to_matrix();
    let y = DVector::from_column_slice(train.labels());
    let n = train.n() as f64;
    let d = x.ncols();
    let eval = |w: &DVector<f64>| -> (f64, DVector<f64>) {
        let m = (&x * w).component_mul(&y);
        let data: f64 = m.iter().map(|&v| loss.value_unchecked(v)).sum();
        (data / n + lambda * w.norm_squared(), m)
    };
    let mut w = DVector::zeros(d);
    let (mut f, mut m) = eval(&w);
    for iter in 0..cfg.max_iters {
        let dphi = m.map(|v| loss.derivative_unchecked(v)).component_mul(&y);
        let grad = x.transpose() * dphi / n + &w * (2.0 * lambda);
        let gnorm = grad.norm();
        debug!(target: "htl::rerm", "primal iter={iter} objective={f:.12e} residual={gnorm:.3e}");
        if gnorm <= cfg.grad_tol {
            return Ok((
                w,
                SolverStats {
                    iterations: iter,
                    residual_norm: gnorm,
                    objective: f,
                },
            ));
        }
        let curv = m.map(|v| loss.second_derivative(v) / n);
        let mut hess = DMatrix::identity(d, d) * (2.0 * lambda);
        for (i, row) in x.row_iter().enumerate() {
            hess += row.transpose() * row * curv[i];
        }
        let dir = match (cfg.method, hess.cholesky()) {
            (DescentMethod::Newton, Some(ch)) => -ch.solve(&grad),
            _ => -grad.clone(),
        };
        let slope = grad.dot(&dir);
        let found = backtrack(f, slope, 1.0, cfg, |t| eval(&(&w + &dir * t)).0);
        match found {
            Some((t, _)) => {
                w += &dir * t;
                let next = eval(&w);
                f = next.0;
                m = next.1;
            }
            None => {
                return Err(HtlError::Convergence {
                    iterations: iter,
                    residual: gnorm,
                    fold: None,
                })
            }
        }
    }
    Err(HtlError::Convergence {
        iterations: cfg.max_iters,
        residual: f64::NAN,
        fold: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::points::Points;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_point() -> Dataset {
        Dataset::new(Points::from_rows(&[[1.0]]).unwrap(), vec![1.0]).unwrap()
    }

    fn random_dataset(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Dataset {
        let data = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels = (0..n)
            .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        Dataset::new(Points::new(d, data).unwrap(), labels).unwrap()
    }

    const LOSSES: [LossSpec; 5] = [
        LossSpec::Exponential,
        LossSpec::Logistic,
        LossSpec::Mse,
        LossSpec::SquaredHinge,
        LossSpec::Softplus { s: 0.1 },
    ];

    #[test]
    fn objective_by_hand() {
        let g = DMatrix::from_element(1, 1, 1.0);
        let s = DVector::from_element(1, 0.0);
        let y = DVector::from_element(1, 1.0);
        let a = DVector::from_element(1, 0.5);
        let f = objective(&a, &g, &s, &y, &LossSpec::Mse, 1.0).unwrap();
        assert_abs_diff_eq!(f, 0.5, epsilon = 1e-15);
        let bad = DVector::from_element(2, 0.5);
        assert!(matches!(
            objective(&bad, &g, &s, &y, &LossSpec::Mse, 1.0),
            Err(HtlError::Dimension { .. })
        ));
    }

    #[test]
    fn objective_at_zero_is_source_risk() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ds = random_dataset(&mut rng, 12, 2);
        let src = SourceHypothesis::linear(vec![0.3, -0.7]);
        let g = KernelSpec::gaussian(0.5).gram(ds.features()).unwrap();
        let s = DVector::from_vec(src.scores(ds.features()).unwrap());
        let y = DVector::from_column_slice(ds.labels());
        for loss in LOSSES {
            let f = objective(&DVector::zeros(12), &g, &s, &y, &loss, 0.3).unwrap();
            let r = crate::htl::empirical_risk(&src, &ds, &loss).unwrap();
            assert_eq!(f, r);
        }
    }

    #[test]
    fn gradient_vanishes_at_perfect_mse_margins() {
        let g = DMatrix::identity(3, 3);
        let y = DVector::from_vec(vec![1.0, -1.0, 1.0]);
        let grad = gradient(&DVector::zeros(3), &g, &y, &y, &LossSpec::Mse, 0.5).unwrap();
        assert_eq!(grad.norm(), 0.0);
    }

    #[test]
    fn one_point_fit_by_hand() {
        let model = fit(
            &one_point(),
            &LossSpec::Mse,
            &KernelSpec::linear(),
            1.0,
            &SourceHypothesis::constant(0.0),
            &SolverConfig::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(model.coeffs[0], 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(model.solver_stats.objective, 0.5, epsilon = 1e-12);
        let u = ridge_oracle(&one_point(), 1.0, &[0.0]).unwrap();
        assert_abs_diff_eq!(u[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn perfect_source_yields_zero_correction() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ds = random_dataset(&mut rng, 15, 3);
        // h_S reproduces the labels on the sample exactly
        let support = ds.features().clone();
        let g = KernelSpec::gaussian(50.0).gram(&support).unwrap();
        let c = g.lu().solve(&DVector::from_column_slice(ds.labels())).unwrap();
        let src = SourceHypothesis::kernel_expansion(
            support,
            c.iter().copied().collect(),
            KernelSpec::gaussian(50.0),
        )
        .unwrap();
        for kernel in [KernelSpec::linear(), KernelSpec::gaussian(1.0)] {
            let m = fit(&ds, &LossSpec::Mse, &kernel, 0.5, &src, &SolverConfig::default()).unwrap();
            assert!(m.coeffs.iter().all(|a| a.abs() <= 1e-8));
        }
        let u = ridge_oracle(&ds, 0.5, ds.labels()).unwrap();
        assert_eq!(u.norm(), 0.0);
    }

    #[test]
    fn ridge_shrinks_with_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ds = random_dataset(&mut rng, 30, 3);
        let s = vec![0.1; 30];
        let mut prev = f64::INFINITY;
        for k in 0..12 {
            let lambda = 1e-3 * 4f64.powi(k);
            let norm = ridge_oracle(&ds, lambda, &s).unwrap().norm();
            assert!(norm <= prev);
            prev = norm;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for loss in LOSSES {
            for _ in 0..10 {
                let n = rng.random_range(1..=20);
                let ds = random_dataset(&mut rng, n, 2);
                let g = KernelSpec::gaussian(0.8).gram(ds.features()).unwrap();
                let s = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
                let y = DVector::from_column_slice(ds.labels());
                let a = DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
                let grad = gradient(&a, &g, &s, &y, &loss, 0.2).unwrap();
                let h = 1e-6;
                for k in 0..n {
                    let mut ap = a.clone();
                    ap[k] += h;
                    let mut am = a.clone();
                    am[k] -= h;
                    let fd = (objective(&ap, &g, &s, &y, &loss, 0.2).unwrap()
                        - objective(&am, &g, &s, &y, &loss, 0.2).unwrap())
                        / (2.0 * h);
                    assert!(
                        (fd - grad[k]).abs() <= 1e-5 * grad[k].abs().max(1e-3),
                        "{loss:?} {fd} vs {}",
                        grad[k]
                    );
                }
            }
        }
    }

    #[test]
    fn objective_is_convex_in_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for t in 0..100 {
            let loss = LOSSES[t % 5];
            let n = rng.random_range(2..=10);
            let ds = random_dataset(&mut rng, n, 2);
            let g = KernelSpec::gaussian(0.5).gram(ds.features()).unwrap();
            let s = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let y = DVector::from_column_slice(ds.labels());
            let a = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let b = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let w: f64 = rng.random_range(0.0..1.0);
            let f = |v: &DVector<f64>| objective(v, &g, &s, &y, &loss, 0.1).unwrap();
            let mid = f(&(&a * w + &b * (1.0 - w)));
            let chord = w * f(&a) + (1.0 - w) * f(&b);
            assert!(mid <= chord + 1e-10 * (1.0 + chord.abs()));
        }
    }

    #[test]
    fn both_methods_converge_to_same_function() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let ds = random_dataset(&mut rng, 20, 2);
        let src = SourceHypothesis::linear(vec![0.4, 0.1]);
        for loss in LOSSES {
            let newton = fit(&ds, &loss, &KernelSpec::gaussian(1.0), 0.5, &src, &SolverConfig::default())
                .unwrap();
            let gd_cfg = SolverConfig {
                method: DescentMethod::Gradient,
                max_iters: 200_000,
                ..SolverConfig::default()
            };
            let gd = fit(&ds, &loss, &KernelSpec::gaussian(1.0), 0.5, &src, &gd_cfg).unwrap();
            assert!(gd.solver_stats.residual_norm <= 1e-8);
            assert!(rkhs_distance(&newton, &gd).unwrap() <= 1e-6, "{loss:?}");
        }
    }

    #[test]
    fn residual_converges_with_singular_gram() {
        // linear kernel with n >> d: rank-2 Gram matrix
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ds = random_dataset(&mut rng, 60, 2);
        let src = SourceHypothesis::linear(vec![-0.5, 0.2]);
        for loss in LOSSES {
            let m = fit(&ds, &loss, &KernelSpec::linear(), 0.3, &src, &SolverConfig::default()).unwrap();
            let r = optimality_residual(&m, &ds).unwrap();
            assert!(r.norm() <= 1e-8, "{loss:?}: {}", r.norm());
        }
    }

    #[test]
    fn exhausted_iterations_report_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let ds = random_dataset(&mut rng, 20, 2);
        let cfg = SolverConfig {
            max_iters: 1,
            method: DescentMethod::Gradient,
            ..SolverConfig::default()
        };
        let err = fit(&ds, &LossSpec::Logistic, &KernelSpec::linear(), 0.1, &SourceHypothesis::constant(0.0), &cfg)
            .unwrap_err();
        match err {
            HtlError::Convergence { residual, .. } => assert!(residual > 1e-8),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_inputs() {
        let ds = one_point();
        let src = SourceHypothesis::constant(0.0);
        assert!(fit(&ds, &LossSpec::Mse, &KernelSpec::linear(), 0.0, &src, &SolverConfig::default()).is_err());
        let bad_cfg = SolverConfig {
            shrink: 1.5,
            ..SolverConfig::default()
        };
        assert!(fit(&ds, &LossSpec::Mse, &KernelSpec::linear(), 1.0, &src, &bad_cfg).is_err());
        let m = fit(&ds, &LossSpec::Mse, &KernelSpec::linear(), 1.0, &src, &SolverConfig::default()).unwrap();
        assert!(matches!(
            refit_without(&m, &ds, 0, &SolverConfig::default()),
            Err(HtlError::Degenerate(_))
        ));
    }

    #[test]
    fn two_point_folds_match_hand_solutions() {
        // x = (1, 2), y = (1, -1), h_S = 0, linear kernel, MSE, λ = 1.
        let ds = Dataset::new(Points::from_rows(&[[1.0], [2.0]]).unwrap(), vec![1.0, -1.0]).unwrap();
        let src = SourceHypothesis::constant(0.0);
        let cfg = SolverConfig::default();
        let full = fit(&ds, &LossSpec::Mse, &KernelSpec::linear(), 1.0, &src, &cfg).unwrap();
        // full: minimize ((u-1)² + (2u+1)²)/2 + u²  ⇒  u = -1/7
        assert_abs_diff_eq!(full.predict_score(&[1.0]).unwrap(), -1.0 / 7.0, epsilon = 1e-9);
        // fold 0 keeps weight 1/2: minimize (2u+1)²/2 + u²  ⇒  u = -1/3
        let f0 = refit_without(&full, &ds, 0, &cfg).unwrap();
        assert_abs_diff_eq!(f0.predict_score(&[1.0]).unwrap(), -1.0 / 3.0, epsilon = 1e-9);
        // fold 1: minimize (u-1)²/2 + u²  ⇒  u = 1/3
        let f1 = refit_without(&full, &ds, 1, &cfg).unwrap();
        assert_abs_diff_eq!(f1.predict_score(&[1.0]).unwrap(), 1.0 / 3.0, epsilon = 1e-9);

        // reduced weighting is the plain one-point problem: minimize (2u+1)² + u² ⇒ u = -2/5
        let reduced = SolverConfig {
            fold_weighting: FoldWeighting::Reduced,
            ..cfg
        };
        let r0 = refit_without(&full, &ds, 0, &reduced).unwrap();
        assert_abs_diff_eq!(r0.predict_score(&[1.0]).unwrap(), -0.4, epsilon = 1e-9);
    }

    #[test]
    fn rkhs_distance_properties() {
        let feats = Points::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let ds = Dataset::new(feats, vec![1.0, -1.0]).unwrap();
        let src = SourceHypothesis::constant(0.0);
        let cfg = SolverConfig::default();
        let a = fit(&ds, &LossSpec::Logistic, &KernelSpec::linear(), 1.0, &src, &cfg).unwrap();
        assert_eq!(rkhs_distance(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b.coeffs[0] += 1.0;
        assert_abs_diff_eq!(rkhs_distance(&a, &b).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(rkhs_distance(&a, &b).unwrap(), rkhs_distance(&b, &a).unwrap());
        let mut c = a.clone();
        c.kernel = KernelSpec::gaussian(1.0);
        assert!(matches!(rkhs_distance(&a, &c), Err(HtlError::Config(_))));
        let fold = refit_without(&a, &ds, 1, &cfg).unwrap();
        assert_eq!(
            rkhs_distance(&a, &fold).unwrap(),
            rkhs_distance(&fold, &a).unwrap()
        );
    }

    #[test]
    fn primal_linear_fit_matches_kernel_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let ds = random_dataset(&mut rng, 25, 3);
        for loss in LOSSES {
            let (w, stats) = fit_linear_weights(&ds, &loss, 0.05, &SolverConfig::default()).unwrap();
            assert!(stats.residual_norm <= 1e-8);
            let m = fit(
                &ds,
                &loss,
                &KernelSpec::linear(),
                0.05,
                &SourceHypothesis::constant(0.0),
                &SolverConfig::default(),
            )
            .unwrap();
            for x in ds.features().rows() {
                let primal: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
                assert!((primal - m.predict_score(x).unwrap()).abs() <= 1e-6, "{loss:?}");
            }
        }
    }

    #[test]
    fn descent_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let ds = random_dataset(&mut rng, 15, 2);
        let src = SourceHypothesis::linear(vec![1.0, -1.0]);
        let problem =
            TrainingProblem::new(&ds, &LossSpec::Logistic, &KernelSpec::gaussian(1.0), 0.1, &src).unwrap();
        for method in [DescentMethod::Newton, DescentMethod::Gradient] {
            let cfg = SolverConfig {
                method,
                max_iters: 100_000,
                ..SolverConfig::default()
            };
            let mut values = Vec::new();
            problem
                .full_objective()
                .minimize_traced(DVector::zeros(15), &cfg, &mut |f| values.push(f))
                .unwrap();
            assert!(values.len() > 1);
            for w in values.windows(2) {
                assert!(w[1] <= w[0] + 1e-14 * w[0].abs(), "{} > {}", w[1], w[0]);
            }
        }
    }
}
