//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use htl_core::audit::audit_stability;
use htl_core::bounds::{beta_bound, estimate_source_loss_sup, BoundContext};
use htl_core::datagen::{make_source, make_target, sample_t, stream_rng, ScenarioConfig, Split, TComponent};
use htl_core::experiment::{curve_csv_bytes, run_negative_transfer, theta_grid, CurveRow, ExperimentConfig, SourceTrainer};
use htl_core::htl::{empirical_risk, Dataset, SourceHypothesis};
use htl_core::points::Points;
use htl_core::rerm::{fit, gradient, objective, optimality_residual, ridge_oracle, SolverConfig};
use htl_core::{KernelSpec, LossSpec};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LOSSES: [LossSpec; 5] = [
    LossSpec::Exponential,
    LossSpec::Logistic,
    LossSpec::Mse,
    LossSpec::SquaredHinge,
    LossSpec::Softplus { s: 0.1 },
];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed <= Duration::from_secs(limit_secs)
}

fn uniform_points(rng: &mut ChaCha8Rng, n: usize, d: usize, half_width: f64) -> Points {
    let data = (0..n * d).map(|_| rng.random_range(-half_width..half_width)).collect();
    Points::new(d, data).unwrap()
}

/// Labels from a noisy random linear rule, and a random bounded source scorer.
fn random_instance(rng: &mut ChaCha8Rng, n_max: usize, d_max: usize) -> (Dataset, SourceHypothesis) {
    let n = rng.random_range(2..=n_max);
    let d = rng.random_range(1..=d_max);
    let features = uniform_points(rng, n, d, 2.0);
    let w: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels = features
        .rows()
        .map(|x| {
            let s: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + rng.random_range(-0.5..0.5);
            if s >= 0.0 { 1.0 } else { -1.0 }
        })
        .collect();
    let src_w: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let bound = rng.random_range(0.2..1.5);
    let source = SourceHypothesis::linear(src_w).scale_score(bound, Some(&features)).unwrap();
    (Dataset::new(features, labels).unwrap(), source)
}

fn random_kernel(rng: &mut ChaCha8Rng, k: usize) -> KernelSpec {
    if k.is_multiple_of(2) {
        KernelSpec::linear()
    } else {
        KernelSpec::gaussian(rng.random_range(0.2..2.0))
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (train, source) = random_instance(&mut rng, 40, 5);
        let lambda = rng.random_range(0.01..2.0);
        let model = fit(&train, &LossSpec::Mse, &KernelSpec::linear(), lambda, &source, &SolverConfig::default()).unwrap();
        let u = ridge_oracle(&train, lambda, &source.scores(train.features()).unwrap()).unwrap();
        let fresh = uniform_points(&mut rng, 100, train.dim(), 3.0);
        for x in train.features().rows().chain(fresh.rows()) {
            let oracle = DVector::from_column_slice(x).dot(&u) + source.score(x);
            worst = worst.max((model.predict_score(x).unwrap() - oracle).abs());
        }
    }
    let t = start.elapsed();
    outcome(
        worst <= 1e-6 && within(t, 10),
        format!("max |fit - ridge| = {worst:.2e} (tol 1e-6), {:.2}s (limit 10s)", t.as_secs_f64()),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst: f64 = 0.0;
    for loss in LOSSES {
        for k in 0..20 {
            let (train, source) = random_instance(&mut rng, 20, 3);
            let kernel = random_kernel(&mut rng, k);
            let n = train.n();
            let g = kernel.gram(train.features()).unwrap();
            let s = DVector::from_vec(source.scores(train.features()).unwrap());
            let y = DVector::from_column_slice(train.labels());
            let a = DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
            let lambda = rng.random_range(0.05..1.0);
            let analytic = gradient(&a, &g, &s, &y, &loss, lambda).unwrap();
            let h = 1e-6;
            let fd = DVector::from_fn(n, |j, _| {
                let mut ap = a.clone();
                ap[j] += h;
                let mut am = a.clone();
                am[j] -= h;
                (objective(&ap, &g, &s, &y, &loss, lambda).unwrap() - objective(&am, &g, &s, &y, &loss, lambda).unwrap())
                    / (2.0 * h)
            });
            let rel = (&fd - &analytic).norm() / analytic.norm().max(1e-12);
            worst = worst.max(rel);
        }
    }
    let t = start.elapsed();
    outcome(
        worst <= 1e-5 && within(t, 5),
        format!("max relative gradient error = {worst:.2e} (tol 1e-5), {:.2}s (limit 5s)", t.as_secs_f64()),
    )
}

/// Fits over {Linear, Gaussian} × losses; returns per-fit (residual, objective slack, radius slack).
fn fit_grid(seed: u64, per_cell: usize) -> Vec<(f64, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for loss in LOSSES {
        for kernel_idx in 0..2 {
            for _ in 0..per_cell {
                let (train, source) = random_instance(&mut rng, 40, 4);
                let kernel = random_kernel(&mut rng, kernel_idx);
                let lambda = rng.random_range(0.05..2.0);
                let model = fit(&train, &loss, &kernel, lambda, &source, &SolverConfig::default()).unwrap();
                let residual = optimality_residual(&model, &train).unwrap().norm();
                let r_model = empirical_risk(&model, &train, &loss).unwrap();
                let r_source = empirical_risk(&source, &train, &loss).unwrap();
                let penalty = lambda * model.rkhs_norm_sq().unwrap();
                let objective_slack = r_model + penalty - r_source;

                let probes = uniform_points(&mut rng, 1000, train.dim(), 3.0);
                let kappa = kernel.resolve_kappa(&train.features().concat(&probes).unwrap());
                let radius = (kappa / lambda * r_source).sqrt();
                let max_h = probes.rows().map(|x| model.correction(x).abs()).fold(0.0, f64::max);
                out.push((residual, objective_slack, max_h - radius));
            }
        }
    }
    out
}

fn criterion_3() -> Outcome {
    let fits = fit_grid(103, 10);
    let worst_res = fits.iter().map(|f| f.0).fold(0.0, f64::max);
    let worst_slack = fits.iter().map(|f| f.1).fold(f64::NEG_INFINITY, f64::max);
    outcome(
        worst_res <= 1e-8 && worst_slack <= 1e-8,
        format!(
            "{} fits: max residual {worst_res:.2e} (tol 1e-8), max R̂[A]+λ‖h‖²-R̂[h_S] = {worst_slack:.2e} (tol 1e-8)",
            fits.len()
        ),
    )
}

fn criterion_4() -> Outcome {
    let fits = fit_grid(104, 10);
    let worst = fits.iter().map(|f| f.2).fold(f64::NEG_INFINITY, f64::max);
    outcome(
        worst <= 1e-6,
        format!("{} fits x 1000 probes: max (|h| - radius) = {worst:.3e} (tol 1e-6)", fits.len()),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut violations = 0;
    let mut folds = 0;
    let mut worst: f64 = f64::NEG_INFINITY;
    for loss in LOSSES {
        for k in 0..20 {
            let (train, source) = random_instance(&mut rng, 40, 4);
            let kernel = random_kernel(&mut rng, k);
            let lambda = rng.random_range(0.05..2.0);
            let rep = audit_stability(&train, &train, &loss, &kernel, lambda, &source, &SolverConfig::default()).unwrap();
            violations += rep.lemma_a4_violations;
            folds += rep.n;
            for d in &rep.per_index_details {
                worst = worst.max(d.rkhs_dev - d.lemma_a4_rhs);
            }
        }
    }
    outcome(
        violations == 0,
        format!("{folds} folds: {violations} violations, max (deviation - bound) = {worst:.3e} (tol 1e-6)"),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let mut worst: f64 = f64::NEG_INFINITY;
    for loss in [LossSpec::Logistic, LossSpec::Softplus { s: 0.1 }] {
        for k in 0..20 {
            let (train, source) = random_instance(&mut rng, 40, 4);
            let kernel = random_kernel(&mut rng, k);
            let lambda = rng.random_range(0.05..2.0);
            let probes = uniform_points(&mut rng, 200, train.dim(), 3.0);
            let fresh = Dataset::new(probes.clone(), vec![1.0; 200]).unwrap();
            let flipped = Dataset::new(probes.clone(), vec![-1.0; 200]).unwrap();
            let kappa = kernel.resolve_kappa(&train.features().concat(&probes).unwrap());
            let cap = kappa / (lambda * train.n() as f64);
            for f in [&fresh, &flipped] {
                let rep = audit_stability(&train, f, &loss, &kernel, lambda, &source, &SolverConfig::default()).unwrap();
                worst = worst.max(rep.witnessed_max_delta - cap);
            }
        }
    }
    outcome(worst <= 1e-6, format!("max (|Δℓ| - κ/(λn)) = {worst:.3e} (tol 1e-6)"))
}

fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let k = v.len() as f64;
    let mean = v.iter().sum::<f64>() / k;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let base = ScenarioConfig {
        n_source: 2000,
        n_target: 50,
        n_test: 2000,
        theta: 0.0,
        seed: 7000,
        ..ScenarioConfig::default()
    };
    let cfg = SolverConfig::default();
    let loss = LossSpec::Logistic;
    let kernel = KernelSpec::gaussian(0.5);
    let lambda = 1.0;
    let source = SourceTrainer::default().train(&make_source(&base).unwrap(), &cfg).unwrap();

    // population source risk from a large independent sample
    let holdout = make_target(&ScenarioConfig { n_test: 50_000, ..base.with_seed(6999) }, Split::Test).unwrap();
    let r_hs = empirical_risk(&source, &holdout, &loss).unwrap();

    let mut stab = Vec::new();
    let mut loo_gap = Vec::new();
    let mut r_hat = Vec::new();
    let mut m_s: f64 = 0.0;
    for r in 0..30 {
        let sc = base.with_seed(base.seed + r);
        let train = make_target(&sc, Split::Train).unwrap();
        let test = make_target(&sc, Split::Test).unwrap();
        let rep = audit_stability(&train, &test, &loss, &kernel, lambda, &source, &cfg).unwrap();
        stab.push(rep.emp_hypothesis_stability);
        loo_gap.push(rep.loo_gap);
        r_hat.push(empirical_risk(&source, &train, &loss).unwrap());
        let mut labels = train.labels().to_vec();
        labels.extend_from_slice(test.labels());
        let pooled = Dataset::new(train.features().concat(test.features()).unwrap(), labels).unwrap();
        m_s = m_s.max(estimate_source_loss_sup(&loss, &source, &pooled).unwrap());
    }
    let ctx = BoundContext::new(1.0, lambda, 50, r_hs, r_hat.iter().sum::<f64>() / 30.0, Some(m_s)).unwrap();
    let beta = beta_bound(&loss, &ctx).unwrap();
    let (s_mean, s_se) = mean_stderr(&stab);
    let (g_mean, g_se) = mean_stderr(&loo_gap);
    let t = start.elapsed();
    let pass_stab = s_mean <= beta + 3.0 * s_se;
    let pass_loo = g_mean <= beta + 3.0 * g_se;
    outcome(
        pass_stab && pass_loo && within(t, 120),
        format!(
            "R[h_S]={r_hs:.4}, beta={beta:.4e}; stability {s_mean:.4e}±{s_se:.1e} [{}]; |loo-test| {g_mean:.4e}±{g_se:.1e} [{}]; {:.1}s (limit 120s)",
            if pass_stab { "ok" } else { "exceeds" },
            if pass_loo { "ok" } else { "exceeds" },
            t.as_secs_f64()
        ),
    )
}

fn median_at(rows: &[CurveRow], loss: &str, theta: f64) -> f64 {
    rows.iter()
        .find(|r| r.loss == loss && (r.theta - theta).abs() < 1e-12)
        .map(|r| r.median_risk)
        .unwrap_or(f64::NAN)
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        scenario: ScenarioConfig {
            r: 5.0,
            d_offset: 5.0,
            n_source: 2000,
            n_target: 100,
            n_test: 5000,
            seed: 8000,
            theta: 0.0,
        },
        losses: LOSSES.to_vec(),
        lambda: 1.0,
        theta_grid: theta_grid(9),
        n_sims: 50,
        ..ExperimentConfig::default()
    };
    let rows = match run_negative_transfer(&cfg) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("run failed: {e}")),
    };
    let t = start.elapsed();
    let mut notes = Vec::new();
    let mut pass_a = true;
    let mut ratio = std::collections::BTreeMap::new();
    for loss in LOSSES {
        let name = loss.name();
        let at0 = median_at(&rows, name, 0.0);
        let atpi = median_at(&rows, name, PI);
        pass_a &= atpi >= at0;
        ratio.insert(name, atpi / at0);
        notes.push(format!("{name} {at0:.3e}->{atpi:.3e}"));
    }
    let pass_b = ratio["exponential"] >= 2.0 * ratio["logistic"] && ratio["exponential"] >= 2.0 * ratio["softplus"];
    let exp_pi = median_at(&rows, "exponential", PI);
    let pass_c = ["logistic", "softplus"].iter().all(|l| {
        let m = median_at(&rows, l, PI);
        m.is_finite() && m < exp_pi
    });
    outcome(
        pass_a && pass_b && pass_c && within(t, 600),
        format!(
            "(a) {} (b) {} [ratios exp {:.3e}, log {:.3e}, softplus {:.3e}] (c) {}; medians θ=0->π: {}; {:.1}s (limit 600s)",
            if pass_a { "ok" } else { "FAIL" },
            if pass_b { "ok" } else { "FAIL" },
            ratio["exponential"],
            ratio["logistic"],
            ratio["softplus"],
            if pass_c { "ok" } else { "FAIL" },
            notes.join(", "),
            t.as_secs_f64()
        ),
    )
}

fn criterion_9() -> Outcome {
    let comp = TComponent::isotropic(vec![5.0, 0.0], 3.0, 2.5).unwrap();
    let draws = sample_t(&comp, 1_000_000, &mut stream_rng(9000, 0)).unwrap();
    let x = draws.to_matrix();
    let n = x.nrows() as f64;
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(x.nrows(), 2, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * centered / (n - 1.0);
    let mean_err = (mean[0] - 5.0).abs().max(mean[1].abs());
    let cov_err = ((cov[(0, 0)] - 15.0).abs() / 15.0).max((cov[(1, 1)] - 15.0).abs() / 15.0);
    outcome(
        mean_err <= 0.05 && cov_err <= 0.05,
        format!(
            "mean ({:.4}, {:.4}) err {mean_err:.4} (tol 0.05); cov diag ({:.3}, {:.3}) rel err {:.2}% (tol 5%)",
            mean[0],
            mean[1],
            cov[(0, 0)],
            cov[(1, 1)],
            100.0 * cov_err
        ),
    )
}

fn criterion_10() -> Outcome {
    let cfg = ExperimentConfig {
        scenario: ScenarioConfig {
            n_source: 500,
            n_target: 40,
            n_test: 500,
            seed: 10_000,
            ..ScenarioConfig::default()
        },
        theta_grid: theta_grid(5),
        n_sims: 12,
        ..ExperimentConfig::default()
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| curve_csv_bytes(&run_negative_transfer(&cfg).unwrap()).unwrap())
    };
    let a = run(1);
    let b = run(1);
    let c = run(4);
    outcome(
        a == b && a == c,
        format!("{} bytes; repeat identical: {}; 1 vs 4 threads identical: {}", a.len(), a == b, a == c),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("oracle equivalence", criterion_1),
        ("gradient check", criterion_2),
        ("optimality", criterion_3),
        ("radius bound", criterion_4),
        ("leave-one-out deviation", criterion_5),
        ("deterministic stability cap", criterion_6),
        ("bound consistency", criterion_7),
        ("negative transfer ordering", criterion_8),
        ("sampler moments", criterion_9),
        ("determinism", criterion_10),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {id:>2} {:<28} {}  {}",
            name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
