mod config;
mod exit;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use htl_core::{
    audit_loo, audit_stability, empirical_risk, estimate_source_loss_sup, fit, per_sample_losses,
    AuditReport, BoundContext, ExperimentConfig, HtlError, LooAudit, StabilityBoundReport,
};
use serde::Serialize;

use config::{read_json, Problem, ProblemConfig};
use exit::Failure;

/// Kernel hypothesis transfer learning with stability certificates.
#[derive(Debug, Parser)]
#[command(name = "htl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the transfer learner and report its risks.
    Fit(Common),
    /// Compute the theoretical stability certificates.
    Bounds(Common),
    /// Measure stability empirically and check the leave-one-out deviation inequality.
    Audit(Common),
    /// Compare the leave-one-out risk with the held-out risk.
    Loo(Common),
    /// Sweep the target rotation and write median held-out risks as CSV.
    NegativeTransfer(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Primary output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn write_output(out: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, bytes).map_err(|source| {
            HtlError::Io {
                path: path.display().to_string(),
                source,
            }
            .into()
        }),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(bytes)
                .and_then(|_| stdout.flush())
                .map_err(|e| Failure::io(format!("stdout: {e}")))
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>, Failure> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| Failure::from(HtlError::Parse(e.to_string())))?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn load_problem(args: &Common) -> Result<(ProblemConfig, Problem), Failure> {
    let mut cfg: ProblemConfig = read_json(&args.config)?;
    if let Some(base) = args.config.parent() {
        cfg.rebase(base);
    }
    let problem = cfg.load(args.seed)?;
    Ok((cfg, problem))
}

#[derive(Serialize)]
struct FitSummary {
    n: usize,
    objective: f64,
    train_risk: f64,
    test_risk: Option<f64>,
    source_train_risk: f64,
    source_test_risk: Option<f64>,
    rkhs_norm_sq: f64,
    iterations: usize,
    residual_norm: f64,
}

fn cmd_fit(args: &Common) -> Result<(), Failure> {
    let (cfg, p) = load_problem(args)?;
    let model = fit(&p.train, &cfg.loss, &cfg.kernel, cfg.lambda, &p.source, &cfg.solver)?;
    let test_risk = p.test.as_ref().map(|t| empirical_risk(&model, t, &cfg.loss)).transpose()?;
    let source_test_risk = p
        .test
        .as_ref()
        .map(|t| empirical_risk(&p.source, t, &cfg.loss))
        .transpose()?;
    let summary = FitSummary {
        n: p.train.n(),
        objective: model.solver_stats.objective,
        train_risk: empirical_risk(&model, &p.train, &cfg.loss)?,
        test_risk,
        source_train_risk: empirical_risk(&p.source, &p.train, &cfg.loss)?,
        source_test_risk,
        rkhs_norm_sq: model.rkhs_norm_sq()?,
        iterations: model.solver_stats.iterations,
        residual_norm: model.solver_stats.residual_norm,
    };
    if let Some(path) = args.out.as_deref().or(cfg.model_out.as_deref()) {
        write_output(Some(path), &to_json(&model)?)?;
    }
    write_output(None, &to_json(&summary)?)
}

fn bound_report(cfg: &ProblemConfig, p: &Problem) -> Result<StabilityBoundReport, Failure> {
    let test = p.require_test()?;
    let pooled = p.pooled()?;
    let m_s = match cfg.m_s {
        Some(m) => m,
        None => estimate_source_loss_sup(&cfg.loss, &p.source, &pooled)?,
    };
    let ctx = BoundContext::new(
        cfg.kernel.resolve_kappa(pooled.features()),
        cfg.lambda,
        p.train.n(),
        empirical_risk(&p.source, test, &cfg.loss)?,
        empirical_risk(&p.source, &p.train, &cfg.loss)?,
        Some(m_s),
    )?;
    let source_losses = per_sample_losses(&p.source, &p.train, &cfg.loss)?;
    let losses = (p.train.n() >= 2).then_some(source_losses.as_slice());
    Ok(StabilityBoundReport::compute(&cfg.loss, &ctx, losses)?)
}

fn cmd_bounds(args: &Common) -> Result<(), Failure> {
    let (cfg, p) = load_problem(args)?;
    write_output(args.out.as_deref(), &to_json(&bound_report(&cfg, &p)?)?)
}

#[derive(Serialize)]
struct AuditOutput {
    audit: AuditReport,
    bounds: StabilityBoundReport,
}

fn cmd_audit(args: &Common) -> Result<(), Failure> {
    let (cfg, p) = load_problem(args)?;
    let fresh = p.require_test()?;
    let audit = audit_stability(&p.train, fresh, &cfg.loss, &cfg.kernel, cfg.lambda, &p.source, &cfg.solver)?;
    if let Some(path) = &cfg.details_csv {
        audit.details_to_csv_path(path)?;
    }
    let violations = audit.lemma_a4_violations;
    let output = AuditOutput {
        audit,
        bounds: bound_report(&cfg, &p)?,
    };
    write_output(args.out.as_deref(), &to_json(&output)?)?;
    if violations > 0 {
        return Err(Failure::invariant(format!(
            "{violations} leave-one-out deviations exceed their bound"
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct LooOutput {
    #[serde(flatten)]
    loo: LooAudit,
    beta: f64,
}

fn cmd_loo(args: &Common) -> Result<(), Failure> {
    let (cfg, p) = load_problem(args)?;
    let test = p.require_test()?;
    let loo = audit_loo(&p.train, test, &cfg.loss, &cfg.kernel, cfg.lambda, &p.source, &cfg.solver)?;
    let beta = bound_report(&cfg, &p)?.beta;
    write_output(args.out.as_deref(), &to_json(&LooOutput { loo, beta })?)
}

fn cmd_negative_transfer(args: &Common) -> Result<(), Failure> {
    let mut cfg: ExperimentConfig = read_json(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.scenario.seed = seed;
    }
    let rows = htl_core::run_negative_transfer(&cfg)?;
    let bytes = htl_core::experiment::curve_csv_bytes(&rows)?;
    let out = match (&args.out, &cfg.output_path) {
        (Some(p), _) => Some(p.clone()),
        (None, Some(p)) => {
            let p = PathBuf::from(p);
            Some(match args.config.parent() {
                Some(base) if p.is_relative() => base.join(p),
                _ => p,
            })
        }
        (None, None) => None,
    };
    write_output(out.as_deref(), &bytes)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let (Command::Fit(common)
    | Command::Bounds(common)
    | Command::Audit(common)
    | Command::Loo(common)
    | Command::NegativeTransfer(common)) = &cli.command;
    if let Some(threads) = common.threads {
        if threads == 0 {
            return Err(HtlError::Config("--threads must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| HtlError::Config(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Bounds(a) => cmd_bounds(a),
        Command::Audit(a) => cmd_audit(a),
        Command::Loo(a) => cmd_loo(a),
        Command::NegativeTransfer(a) => cmd_negative_transfer(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::CONFIG } else { exit::OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
