//! Command-line harness: LFA maps, training, single solves, and the bench
//! matrix with CSV/PGM outputs.

pub mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fns_core::checkpoint::Checkpoint;
use fns_core::grid::{norm2, Grid};
use fns_core::krylov::{bicgstab_l, cg, gmres};
use fns_core::lfa::{factor_map, FactorKind, FactorParams, ThetaGrid};
use fns_core::problems::{sample_rhs, Family, ProblemSpec};
use fns_core::smoothers::SmootherSpec;
use fns_core::spectral::{
    fast_helmholtz_solve, fast_poisson_solve, fns_solve_traced, stationary_solve, FilterBasis, IterationTrace,
};
use fns_core::training::{train_with_progress, KSchedule, TrainConfig};
use rayon::prelude::*;

use crate::config::{read_json, ExperimentConfig, Method, RunConfig, SmootherConfig};

#[derive(Debug, Parser)]
#[command(name = "fns", version, about = "Fourier neural solver workbench")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Local Fourier analysis map of a smoother.
    Lfa(LfaArgs),
    /// Train a spectral filter and write a checkpoint.
    Train(TrainArgs),
    /// Solve one random right-hand side and write its residual trace.
    Solve(SolveArgs),
    /// Run every experiment listed in a config file.
    Bench(BenchArgs),
    /// Print the contents of a checkpoint.
    InspectCheckpoint(InspectArgs),
}

#[derive(Debug, Clone, Args, Default)]
pub struct ProblemArgs {
    /// poisson | anisotropic | convdiff | helmholtz
    #[arg(long)]
    pub problem: Option<Family>,
    /// Mesh divisions per axis (h = 1/n).
    #[arg(long)]
    pub n: Option<usize>,
    /// Anisotropic strength.
    #[arg(long)]
    pub xi: Option<f64>,
    /// Anisotropic direction in radians.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Convection–diffusion coefficient.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Helmholtz wavenumber.
    #[arg(long)]
    pub kappa: Option<f64>,
}

impl ProblemArgs {
    fn resolve(&self, base: Option<ProblemSpec>) -> Result<ProblemSpec> {
        let mut p = match (base, self.problem) {
            (Some(b), None) => b,
            (Some(b), Some(f)) if b.family == f => b,
            (_, Some(family)) => ProblemSpec {
                family,
                n: 64,
                xi: 1.0,
                theta: 0.0,
                epsilon: 1.0,
                kappa: 0.0,
            },
            (None, None) => bail!("--problem is required"),
        };
        if let Some(n) = self.n {
            p.n = n;
        }
        if let Some(v) = self.xi {
            p.xi = v;
        }
        if let Some(v) = self.theta {
            p.theta = v;
        }
        if let Some(v) = self.epsilon {
            p.epsilon = v;
        }
        if let Some(v) = self.kappa {
            p.kappa = v;
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Args, Default)]
pub struct SmootherArgs {
    /// jacobi | chebyshev | learned_conv
    #[arg(long)]
    pub smoother: Option<String>,
    /// Jacobi weight.
    #[arg(long)]
    pub omega: Option<f64>,
    /// Jacobi sweeps per smoother call.
    #[arg(long)]
    pub sweeps: Option<usize>,
    /// Chebyshev polynomial degree.
    #[arg(long)]
    pub degree: Option<usize>,
    /// Chebyshev interval ratio λ_max/λ_min.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Chebyshev λ_max; estimated by the power method when omitted.
    #[arg(long)]
    pub lambda_max: Option<f64>,
}

impl SmootherArgs {
    fn resolve(&self, base: Option<SmootherConfig>, default_sweeps: usize) -> Result<SmootherConfig> {
        let kind = match (&self.smoother, &base) {
            (Some(k), _) => k.to_ascii_lowercase().replace('-', "_"),
            (None, Some(SmootherConfig::Jacobi { .. })) | (None, None) => "jacobi".into(),
            (None, Some(SmootherConfig::Chebyshev { .. })) => "chebyshev".into(),
            (None, Some(SmootherConfig::LearnedConv)) => "learned_conv".into(),
        };
        Ok(match kind.as_str() {
            "jacobi" => {
                let (omega, sweeps) = match base {
                    Some(SmootherConfig::Jacobi { omega, sweeps }) => (omega, sweeps),
                    _ => (2.0 / 3.0, default_sweeps),
                };
                SmootherConfig::Jacobi {
                    omega: self.omega.unwrap_or(omega),
                    sweeps: self.sweeps.unwrap_or(sweeps),
                }
            }
            "chebyshev" => {
                let (degree, alpha, lambda_max) = match base {
                    Some(SmootherConfig::Chebyshev {
                        degree,
                        alpha,
                        lambda_max,
                    }) => (degree, alpha, lambda_max),
                    _ => (
                        fns_core::smoothers::DEFAULT_CHEBYSHEV_DEGREE,
                        fns_core::smoothers::DEFAULT_CHEBYSHEV_ALPHA,
                        None,
                    ),
                };
                SmootherConfig::Chebyshev {
                    degree: self.degree.unwrap_or(degree),
                    alpha: self.alpha.unwrap_or(alpha),
                    lambda_max: self.lambda_max.or(lambda_max),
                }
            }
            "learned_conv" | "conv" => SmootherConfig::LearnedConv,
            other => bail!("unknown smoother `{other}`"),
        })
    }
}

#[derive(Debug, Args)]
pub struct LfaArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub smoother: SmootherArgs,
    /// Samples per θ axis.
    #[arg(long, default_value_t = fns_core::lfa::DEFAULT_RESOLUTION)]
    pub resolution: usize,
    /// Sample placement: nodes (includes θ = 0, ±π/2) or cell-centered.
    #[arg(long, default_value = "nodes")]
    pub theta_grid: String,
    /// Output directory for `<name>.csv` and `<name>.pgm`.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "lfa")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run document (JSON); flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub smoother: SmootherArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Learning rate of the learned convolution kernels.
    #[arg(long)]
    pub smoother_lr: Option<f64>,
    /// Fixed number of unrolled steps.
    #[arg(long, conflicts_with = "k_ramp")]
    pub k: Option<usize>,
    /// Linear ramp of unrolled steps, `start:end`.
    #[arg(long)]
    pub k_ramp: Option<String>,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    #[arg(long)]
    pub init_scale: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// fourier | sine
    #[arg(long)]
    pub basis: Option<String>,
    /// Checkpoint output path.
    #[arg(long, default_value = "checkpoint.bin")]
    pub out: PathBuf,
    /// Per-epoch loss CSV; defaults to the checkpoint path with `.loss.csv`.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    /// Print every epoch to stderr.
    #[arg(long)]
    pub verbose: bool,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Run document (JSON); flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// fns | jacobi | chebyshev | cg | gmres | bicgstabl | dst-direct
    #[arg(long)]
    pub method: Option<Method>,
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub smoother: SmootherArgs,
    /// Trained checkpoint (fns only); supplies the problem and smoother.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Right-hand side seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Iteration cap: outer steps for fns and stationary methods, products for Krylov methods.
    #[arg(long)]
    pub maxit: Option<usize>,
    /// GMRES restart length; 0 for unrestarted.
    #[arg(long)]
    pub restart: Option<usize>,
    /// BiCGSTAB(ℓ) degree.
    #[arg(long)]
    pub ell: Option<usize>,
    /// Residual trace output.
    #[arg(long, default_value = "trace.csv")]
    pub trace: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Experiment document (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub path: PathBuf,
    /// Write |ϑ| (zero frequency centered) as a CSV matrix.
    #[arg(long)]
    pub magnitude_csv: Option<PathBuf>,
    /// Write |ϑ| (zero frequency centered) as a PGM image scaled to its maximum.
    #[arg(long)]
    pub magnitude_pgm: Option<PathBuf>,
}

/// Fixed 17-significant-digit formatting used in every numeric output.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Executes a parsed command, writing human-readable output to `out`.
pub fn run(cli: Cli, out: &mut dyn std::io::Write) -> Result<()> {
    match cli.command {
        Command::Lfa(a) => cmd_lfa(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Solve(a) => cmd_solve(&a, out),
        Command::Bench(a) => cmd_bench(&a, out),
        Command::InspectCheckpoint(a) => cmd_inspect(&a, out),
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn cmd_lfa(a: &LfaArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let problem = a.problem.resolve(None)?;
    let s = problem.stencil()?;
    let layout = match a.theta_grid.as_str() {
        "nodes" | "node" => ThetaGrid::Nodes,
        "cell" | "cell-centered" | "cell_centered" => ThetaGrid::CellCentered,
        other => bail!("unknown theta grid `{other}`"),
    };
    let smoother = a.smoother.resolve(None, 1)?;
    let (kind, params) = match smoother {
        SmootherConfig::Jacobi { omega, sweeps } => (
            FactorKind::Jacobi,
            FactorParams {
                omega,
                sweeps,
                taus: Vec::new(),
            },
        ),
        SmootherConfig::Chebyshev { .. } => {
            let spec = smoother.build(&problem)?;
            (
                FactorKind::Chebyshev,
                FactorParams {
                    taus: spec.taus().ok_or_else(|| anyhow!("invalid Chebyshev parameters"))?,
                    ..FactorParams::default()
                },
            )
        }
        SmootherConfig::LearnedConv => bail!("LFA supports the jacobi and chebyshev smoothers"),
    };
    let map = factor_map(kind, &s, &params, a.resolution, layout)?;
    let csv = a.out_dir.join(format!("{}.csv", a.name));
    let pgm = a.out_dir.join(format!("{}.pgm", a.name));
    write_file(&csv, map.to_csv())?;
    write_file(&pgm, map.to_pgm())?;
    writeln!(out, "mu_low={}", fmt_num(map.mu_low))?;
    writeln!(out, "mu_high={}", fmt_num(map.mu_high))?;
    writeln!(out, "fraction_above_one={}", fmt_num(map.fraction_above(1.0)))?;
    writeln!(out, "csv={}", csv.display())?;
    writeln!(out, "pgm={}", pgm.display())?;
    Ok(())
}

fn parse_ramp(text: &str) -> Result<KSchedule> {
    let (a, b) = text
        .split_once(':')
        .or_else(|| text.split_once('-'))
        .ok_or_else(|| anyhow!("--k-ramp expects start:end, got `{text}`"))?;
    Ok(KSchedule::Ramp {
        start: a.trim().parse().context("ramp start")?,
        end: b.trim().parse().context("ramp end")?,
    })
}

fn parse_basis(text: &str) -> Result<FilterBasis> {
    match text.to_ascii_lowercase().as_str() {
        "fourier" | "fft" => Ok(FilterBasis::Fourier),
        "sine" | "dst" => Ok(FilterBasis::Sine),
        other => bail!("unknown filter basis `{other}`"),
    }
}

fn load_run(path: &Option<PathBuf>) -> Result<Option<RunConfig>> {
    path.as_ref().map(|p| read_json::<RunConfig>(p)).transpose()
}

/// Trains the filter of an `fns` run, returning the checkpoint and its loss CSV.
pub fn train_run(
    problem: &ProblemSpec,
    smoother: &SmootherConfig,
    config: &TrainConfig,
    verbose: bool,
) -> Result<(Checkpoint, String)> {
    let mut config = config.clone();
    config.train_smoother = smoother.is_learned();
    let phi = smoother.build(problem)?;
    let report = train_with_progress(problem, &phi, &config, |r| {
        if verbose {
            eprintln!("epoch {} K={} loss={}", r.epoch, r.k, fmt_num(r.loss));
        }
    })?;
    let csv = report.history_csv(config.batch_size);
    Ok((report.checkpoint, csv))
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let base = load_run(&a.config)?;
    let problem = a.problem.resolve(base.as_ref().map(|b| b.problem))?;
    let smoother = a.smoother.resolve(base.as_ref().map(|b| b.smoother.clone()), 5)?;
    let mut tc = base.as_ref().and_then(|b| b.train.clone()).unwrap_or_default();
    if let Some(v) = a.epochs {
        tc.epochs = v;
    }
    if let Some(v) = a.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = a.lr {
        tc.learning_rate = v;
    }
    if let Some(v) = a.smoother_lr {
        tc.smoother_learning_rate = Some(v);
    }
    if let Some(k) = a.k {
        tc.k_schedule = KSchedule::Fixed(k);
    }
    if let Some(r) = &a.k_ramp {
        tc.k_schedule = parse_ramp(r)?;
    }
    if let Some(v) = a.grad_clip {
        tc.grad_clip = Some(v);
    }
    if let Some(v) = a.init_scale {
        tc.init_scale = v;
    }
    if let Some(v) = a.seed {
        tc.seed = v;
    }
    if let Some(b) = &a.basis {
        tc.basis = parse_basis(b)?;
    }
    let (checkpoint, csv) = train_run(&problem, &smoother, &tc, a.verbose)?;
    write_file(&a.out, checkpoint.to_bytes()?)?;
    let loss_path = a.loss_csv.clone().unwrap_or_else(|| a.out.with_extension("loss.csv"));
    write_file(&loss_path, csv)?;
    let final_loss = checkpoint.meta.final_loss.unwrap_or(f64::NAN);
    writeln!(out, "final_loss={}", fmt_num(final_loss))?;
    writeln!(out, "checkpoint={}", a.out.display())?;
    writeln!(out, "loss_csv={}", loss_path.display())?;
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        bail!("checkpoint not found: {}", path.display());
    }
    Checkpoint::load(path).with_context(|| format!("reading checkpoint {}", path.display()))
}

/// One solve of `problem` with right-hand side `f`.
pub fn solve_with(
    method: Method,
    problem: &ProblemSpec,
    smoother: &SmootherConfig,
    checkpoint: Option<&Checkpoint>,
    f: &Grid,
    run: &RunConfig,
) -> Result<IterationTrace> {
    let s = problem.stencil()?;
    let trace = match method {
        Method::Fns => {
            let c = checkpoint.ok_or_else(|| anyhow!("fns needs a checkpoint"))?;
            fns_solve_traced(&s, &c.smoother, &c.filter, f, run.tol, run.maxit)?.1
        }
        Method::Jacobi | Method::Chebyshev => {
            let cfg = match (method, smoother) {
                (Method::Jacobi, SmootherConfig::Jacobi { .. }) | (Method::Chebyshev, SmootherConfig::Chebyshev { .. }) => {
                    smoother.clone()
                }
                (Method::Jacobi, _) => SmootherConfig::default(),
                _ => SmootherConfig::Chebyshev {
                    degree: fns_core::smoothers::DEFAULT_CHEBYSHEV_DEGREE,
                    alpha: fns_core::smoothers::DEFAULT_CHEBYSHEV_ALPHA,
                    lambda_max: None,
                },
            };
            let phi: SmootherSpec = cfg.build(problem)?;
            stationary_solve(&s, &phi, f, run.tol, run.maxit)?.1
        }
        Method::Cg => cg(&s, f, run.tol, run.maxit)?.1,
        Method::Gmres => {
            let restart = if run.restart == 0 { run.maxit } else { run.restart };
            gmres(&s, f, restart, run.tol, run.maxit)?.1
        }
        Method::Bicgstabl => bicgstab_l(&s, f, run.ell, run.tol, run.maxit)?.1,
        Method::DstDirect => {
            let u = match problem.family {
                Family::Poisson => fast_poisson_solve(f),
                Family::Helmholtz => fast_helmholtz_solve(f, problem.kappa)?,
                other => bail!("dst-direct solves poisson and helmholtz only, not {}", other.name()),
            };
            let rel = norm2(&s.residual(&u, f)) / norm2(f);
            IterationTrace {
                residuals: vec![1.0, rel],
                matvecs: vec![0, 0],
                converged: rel <= run.tol,
                diverged: !rel.is_finite(),
                iterations: 1,
            }
        }
    };
    Ok(trace)
}

pub fn cmd_solve(a: &SolveArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let base = load_run(&a.config)?;
    let method = a
        .method
        .or(base.as_ref().map(|b| b.solver))
        .ok_or_else(|| anyhow!("--method is required"))?;
    let checkpoint_path = a.checkpoint.clone().or(base.as_ref().and_then(|b| b.checkpoint.clone()));
    let checkpoint = match (method, &checkpoint_path) {
        (Method::Fns, Some(p)) => Some(load_checkpoint(p)?),
        (Method::Fns, None) => bail!("--checkpoint is required for the fns method"),
        _ => None,
    };
    let problem_base = checkpoint.as_ref().map(|c| c.problem).or(base.as_ref().map(|b| b.problem));
    let problem = a.problem.resolve(problem_base)?;
    if let Some(c) = &checkpoint {
        if c.problem != problem {
            bail!("problem flags disagree with the checkpoint's problem");
        }
    }
    let smoother = a.smoother.resolve(base.as_ref().map(|b| b.smoother.clone()), 5)?;
    let mut run = base.unwrap_or(RunConfig {
        name: None,
        problem,
        smoother: smoother.clone(),
        solver: method,
        train: None,
        checkpoint: checkpoint_path,
        tol: 1e-6,
        maxit: 10_000,
        num_rhs: 1,
        seed: 0,
        restart: fns_core::krylov::DEFAULT_GMRES_RESTART,
        ell: 2,
    });
    if let Some(v) = a.seed {
        run.seed = v;
    }
    if let Some(v) = a.tol {
        run.tol = v;
    }
    if let Some(v) = a.maxit {
        run.maxit = v;
    }
    if let Some(v) = a.restart {
        run.restart = v;
    }
    if let Some(v) = a.ell {
        run.ell = v;
    }
    let f = sample_rhs(problem.n, run.seed);
    let start = Instant::now();
    let trace = solve_with(method, &problem, &smoother, checkpoint.as_ref(), &f, &run)?;
    let wall = start.elapsed().as_secs_f64();
    write_file(&a.trace, trace.to_csv())?;
    writeln!(
        out,
        "method={} iterations={} matvecs={} final_residual={} status={} wall_time_s={:.6}",
        method.name(),
        trace.iterations,
        trace.total_matvecs(),
        fmt_num(trace.final_residual()),
        trace.status(),
        wall
    )?;
    Ok(())
}

/// Header of the bench summary; wall time is the last column.
pub const BENCH_HEADER: &str = "name,family,n,solver,smoother,num_rhs,mean_iterations,std_iterations,non_converged,diverged,mean_matvecs,mean_final_residual,status,error,mean_wall_time_s";

struct BenchRow {
    fields: String,
    wall: f64,
}

fn csv_escape(text: &str) -> String {
    if text.contains([',', '"', '\n']) {
        format!("\"{}\"", text.replace('"', "\"\""))
    } else {
        text.to_string()
    }
}

fn smoother_label(run: &RunConfig) -> String {
    if !matches!(run.solver, Method::Fns | Method::Jacobi | Method::Chebyshev) {
        return "-".into();
    }
    match &run.smoother {
        SmootherConfig::Jacobi { omega, sweeps } => format!("jacobi(omega={omega};sweeps={sweeps})"),
        SmootherConfig::Chebyshev { degree, alpha, .. } => format!("chebyshev(degree={degree};alpha={alpha})"),
        SmootherConfig::LearnedConv => "learned_conv".into(),
    }
}

fn bench_one(run: &RunConfig, label: &str, dir: &Path) -> Result<BenchRow> {
    run.validate()?;
    let checkpoint = if run.solver == Method::Fns {
        Some(match (&run.checkpoint, &run.train) {
            (Some(p), _) => load_checkpoint(p)?,
            (None, Some(tc)) => {
                let (c, csv) = train_run(&run.problem, &run.smoother, tc, false)?;
                write_file(&dir.join(format!("{label}.bin")), c.to_bytes()?)?;
                write_file(&dir.join(format!("{label}.loss.csv")), csv)?;
                c
            }
            (None, None) => unreachable!("validated"),
        })
    } else {
        None
    };
    let problem = checkpoint.as_ref().map(|c| c.problem).unwrap_or(run.problem);
    let mut iterations = Vec::with_capacity(run.num_rhs);
    let mut matvecs = 0usize;
    let mut residual_sum = 0.0;
    let mut runs = Vec::with_capacity(run.num_rhs);
    let mut wall = 0.0;
    for i in 0..run.num_rhs {
        let f = sample_rhs(problem.n, run.seed.wrapping_add(i as u64));
        let start = Instant::now();
        let trace = solve_with(run.solver, &problem, &run.smoother, checkpoint.as_ref(), &f, run)?;
        wall += start.elapsed().as_secs_f64();
        if i == 0 {
            write_file(&dir.join(format!("{label}_trace.csv")), trace.to_csv())?;
        }
        iterations.push(trace.iterations);
        matvecs += trace.total_matvecs();
        residual_sum += trace.final_residual();
        runs.push((trace.iterations, trace.final_residual(), trace.converged, trace.diverged));
    }
    let summary = fns_core::training::EvalSummary::from_runs(&runs, run.maxit);
    let count = run.num_rhs as f64;
    let status = if summary.non_converged == 0 {
        "OK"
    } else if summary.diverged > 0 {
        "DIVERGED"
    } else {
        "MAXITER"
    };
    let fields = [
        csv_escape(label),
        problem.family.name().to_string(),
        problem.n.to_string(),
        run.solver.name().to_string(),
        csv_escape(&smoother_label(run)),
        run.num_rhs.to_string(),
        fmt_num(summary.mean),
        fmt_num(summary.std),
        summary.non_converged.to_string(),
        summary.diverged.to_string(),
        fmt_num(matvecs as f64 / count),
        fmt_num(residual_sum / count),
        status.to_string(),
        String::new(),
    ]
    .join(",");
    Ok(BenchRow {
        fields,
        wall: wall / count,
    })
}

fn error_row(run: &RunConfig, label: &str, message: &str) -> BenchRow {
    let fields = [
        csv_escape(label),
        run.problem.family.name().to_string(),
        run.problem.n.to_string(),
        run.solver.name().to_string(),
        csv_escape(&smoother_label(run)),
        run.num_rhs.to_string(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        "ERROR".to_string(),
        csv_escape(message),
    ]
    .join(",");
    BenchRow { fields, wall: 0.0 }
}

/// Runs the experiment matrix; returns the summary CSV text.
pub fn bench(config: &ExperimentConfig, dir: &Path) -> Result<String> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let rows: Vec<BenchRow> = config
        .runs
        .par_iter()
        .enumerate()
        .map(|(i, run)| {
            let label = run.label(i);
            let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| bench_one(run, &label, dir)));
            match outcome {
                Ok(Ok(row)) => row,
                Ok(Err(e)) => error_row(run, &label, &format!("{e:#}")),
                Err(_) => error_row(run, &label, "run panicked"),
            }
        })
        .collect();
    let mut csv = String::from(BENCH_HEADER);
    csv.push('\n');
    for row in rows {
        let _ = writeln!(csv, "{},{:.6}", row.fields, row.wall);
    }
    Ok(csv)
}

pub fn cmd_bench(a: &BenchArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let config: ExperimentConfig = read_json(&a.config)?;
    let dir = a
        .out_dir
        .clone()
        .or(config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("bench_out"));
    let csv = bench(&config, &dir)?;
    let path = dir.join("results.csv");
    write_file(&path, &csv)?;
    writeln!(out, "runs={}", config.runs.len())?;
    writeln!(out, "results={}", path.display())?;
    Ok(())
}

/// `|ϑ|` with the zero frequency moved to the center, rows by `k₂`.
fn centered_magnitude(c: &Checkpoint) -> Vec<Vec<f64>> {
    let side = c.problem.n - 1;
    let mag = c.filter.magnitude();
    let shift = match c.filter.basis() {
        FilterBasis::Fourier => side / 2,
        FilterBasis::Sine => 0,
    };
    (0..side)
        .map(|j| {
            (0..side)
                .map(|i| mag.get((i + side - shift) % side, (j + side - shift) % side))
                .collect()
        })
        .collect()
}

pub fn cmd_inspect(a: &InspectArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let c = load_checkpoint(&a.path)?;
    let mags: Vec<f64> = c.filter.coeffs().iter().map(|z| z.norm()).collect();
    let max = mags.iter().cloned().fold(0.0, f64::max);
    let mean = mags.iter().sum::<f64>() / mags.len() as f64;
    let doc = serde_json::json!({
        "problem": c.problem,
        "smoother": c.smoother.name(),
        "smoother_products": c.smoother.matvecs(),
        "basis": c.filter.basis(),
        "bins": mags.len(),
        "filter_max_abs": max,
        "filter_mean_abs": mean,
        "meta": c.meta,
    });
    writeln!(out, "{}", serde_json::to_string_pretty(&doc)?)?;
    if a.magnitude_csv.is_some() || a.magnitude_pgm.is_some() {
        let rows = centered_magnitude(&c);
        if let Some(p) = &a.magnitude_csv {
            let mut csv = String::new();
            for row in &rows {
                let line: Vec<String> = row.iter().map(|&v| fmt_num(v)).collect();
                let _ = writeln!(csv, "{}", line.join(","));
            }
            write_file(p, csv)?;
        }
        if let Some(p) = &a.magnitude_pgm {
            let side = rows.len();
            let mut bytes = format!("P5\n{side} {side}\n255\n").into_bytes();
            for row in rows.iter().rev() {
                bytes.extend(row.iter().map(|&v| if max > 0.0 { (255.0 * v / max).round() as u8 } else { 0 }));
            }
            write_file(p, bytes)?;
        }
    }
    Ok(())
}
