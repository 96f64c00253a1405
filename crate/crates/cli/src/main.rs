//! `fisher-fair`: equilibrium computation and fair division of a
//! one-dimensional cake under piecewise-linear valuations.
//!
//! Exit codes: 0 on a certified result, 1 on input errors, 2 when a solver
//! stops without a certificate or verification fails.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fisher_fair_core::bench::{self, THREADS_ENV};
use fisher_fair_core::conic::{emit_conic_program, ConicProgram};
use fisher_fair_core::dual::{allocation_at, GAP_TOL, KKT_TOL};
use fisher_fair_core::ellipsoid::{ellipsoid_solve, write_diagnostics_csv, EllipsoidConfig};
use fisher_fair_core::envelope::write_plot_csv;
use fisher_fair_core::generate::sample_document;
use fisher_fair_core::oracle::{discretized_oracle, OracleConfig};
use fisher_fair_core::sda::{mse_curve, sda_run};
use fisher_fair_core::verify::certify;
use fisher_fair_core::{solve, EquilibriumResult, Error, MarketInstance, Mode, SolveConfig, StepSchedule};

#[derive(Parser)]
#[command(
    name = "fisher-fair",
    version,
    about = "Market equilibria and fair division of [0,1] with piecewise-linear valuations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute an equilibrium and write it as result JSON.
    Solve(SolveArgs),
    /// Check a result file against an instance (KKT residuals and fairness).
    Verify(VerifyArgs),
    /// Write the conic program of an instance, or ingest a solution of it.
    EmitConic(EmitConicArgs),
    /// Run stochastic dual averaging and write its trace CSV.
    Sda(SdaArgs),
    /// Run the ellipsoid method on the feasible-utility program.
    Ellipsoid(EllipsoidArgs),
    /// Solve a discretized copy of the market by proportional response.
    Oracle(OracleArgs),
    /// Write a random instance.
    SampleInstance(SampleArgs),
    /// Write the price envelope and scaled valuations at a result's utility prices.
    PlotData(PlotArgs),
    /// Time model building and dual solves over a grid of sizes.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SolveMode {
    /// Dual Newton, falling back to Polyak subgradient steps.
    Auto,
    /// Dual Newton only.
    Dual,
    /// Stochastic dual averaging; the allocation is recovered at the averaged iterate.
    Sda,
    /// Ellipsoid method (linear instances only).
    Ellipsoid,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Linear,
    Quasilinear,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Linear => Mode::Linear,
            ModeArg::Quasilinear => Mode::Quasilinear,
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    /// Instance JSON file.
    #[arg(long)]
    instance: PathBuf,
    /// Solver to use.
    #[arg(long, value_enum, default_value = "auto")]
    mode: SolveMode,
    /// Result JSON path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Duality gap required for exit code 0 (dual, auto and sda modes).
    #[arg(long, default_value_t = GAP_TOL)]
    gap_tol: f64,
    /// Iteration cap of the dual solver, or the number of SDA steps.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Accuracy of the ellipsoid method.
    #[arg(long, default_value_t = 1e-4)]
    epsilon: f64,
    /// RNG seed for SDA.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct VerifyArgs {
    /// Instance JSON file.
    #[arg(long)]
    instance: PathBuf,
    /// Result JSON written by `solve`.
    #[arg(long)]
    result: PathBuf,
    /// Tolerance applied to every residual.
    #[arg(long, default_value_t = KKT_TOL)]
    tol: f64,
    /// Report JSON path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EmitConicArgs {
    /// Instance JSON file.
    #[arg(long)]
    instance: PathBuf,
    /// Output path (program JSON, or result JSON with --ingest); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Solution vector of the emitted program (JSON array of numbers) to map
    /// back to utilities; the result is recovered at `β_i = B_i/u_i`.
    #[arg(long)]
    ingest: Option<PathBuf>,
    /// Duality gap required for exit code 0 with --ingest.
    #[arg(long, default_value_t = GAP_TOL)]
    gap_tol: f64,
}

#[derive(Args)]
struct SdaArgs {
    /// Instance JSON file.
    #[arg(long)]
    instance: PathBuf,
    /// Number of steps T.
    #[arg(long, default_value_t = 100_000)]
    iterations: usize,
    /// Seed of the traced run; replications use consecutive seeds from here.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trace CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip the reference dual solve (no sqerr column, no curve).
    #[arg(long)]
    no_reference: bool,
    /// Replications for the mean-square-error curve.
    #[arg(long, default_value_t = 20)]
    replications: usize,
    /// CSV path for the curve `t, mse, envelope`.
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Args)]
struct EllipsoidArgs {
    /// Instance JSON file.
    #[arg(long)]
    instance: PathBuf,
    /// Accuracy ε in (0, 1).
    #[arg(long, default_value_t = 1e-4)]
    epsilon: f64,
    /// Iteration cap; the theoretical call bound when omitted.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Ellipsoid result JSON path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Diagnostic CSV path.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    /// Instance JSON file.
    #[arg(long)]
    instance: PathBuf,
    /// Number of equal cells.
    #[arg(long, default_value_t = 2000)]
    cells: usize,
    /// Round cap of proportional response.
    #[arg(long, default_value_t = 200_000)]
    max_rounds: usize,
    /// Duality gap of the discretized market at which to stop.
    #[arg(long, default_value_t = 1e-7)]
    gap_tol: f64,
    /// Oracle JSON path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    /// Number of buyers.
    #[arg(long)]
    n: usize,
    /// Number of segments.
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "linear")]
    mode: ModeArg,
    /// Instance JSON path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// Instance JSON file.
    #[arg(long)]
    instance: PathBuf,
    /// Result JSON; the instance is solved when omitted.
    #[arg(long)]
    result: Option<PathBuf>,
    /// Uniform sample count; piece endpoints are always added.
    #[arg(long, default_value_t = 1000)]
    points: usize,
    /// CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Buyer counts and segment counts as `N_LIST:K_LIST`, e.g. `50,100:50,100`.
    #[arg(long, default_value = "50,100:50,100")]
    grid: String,
    /// Comma-separated seeds.
    #[arg(long, default_value = "1,2,3,4,5,6,7,8")]
    seeds: String,
    /// Worker threads; all cores when unset.
    #[arg(long, env = THREADS_ENV)]
    threads: Option<usize>,
    /// CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_text(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    let mut out = output(path)?;
    writeln!(out, "{text}")?;
    out.flush()?;
    Ok(())
}

fn load(path: &Path) -> anyhow::Result<MarketInstance> {
    MarketInstance::load(path).with_context(|| format!("loading instance {}", path.display()))
}

fn load_result(path: &Path) -> anyhow::Result<EquilibriumResult> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    EquilibriumResult::from_json(&text).with_context(|| format!("parsing result {}", path.display()))
}

fn parse_list<T: std::str::FromStr>(s: &str) -> anyhow::Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse().map_err(|_| anyhow::anyhow!("not a number: {x:?}")))
        .collect()
}

/// Result plus whether it is certified.
fn run_solver(inst: &MarketInstance, args: &SolveArgs) -> anyhow::Result<(EquilibriumResult, bool)> {
    let dual_cfg = SolveConfig {
        gap_tol: args.gap_tol,
        max_iter: args.max_iter.unwrap_or(SolveConfig::default().max_iter),
        ..SolveConfig::default()
    };
    let unwrap = |r: fisher_fair_core::Result<EquilibriumResult>| match r {
        Ok(res) => Ok((res, true)),
        Err(Error::NotConverged { best, .. }) => Ok((*best, false)),
        Err(e) => Err(e),
    };
    Ok(match args.mode {
        SolveMode::Dual => unwrap(solve(inst, &dual_cfg))?,
        SolveMode::Auto => {
            let (res, ok) = unwrap(solve(inst, &dual_cfg))?;
            if ok {
                (res, ok)
            } else {
                let polyak = SolveConfig {
                    max_iter: 20_000,
                    gap_tol: args.gap_tol,
                    schedule: StepSchedule::Polyak,
                };
                let (alt, alt_ok) = unwrap(solve(inst, &polyak))?;
                if alt.gap < res.gap {
                    (alt, alt_ok)
                } else {
                    (res, ok)
                }
            }
        }
        SolveMode::Sda => {
            let trace = sda_run(inst, args.max_iter.unwrap_or(100_000), args.seed, None);
            let beta = trace.last().beta_avg.clone();
            let groups: Vec<Vec<usize>> = (0..inst.n()).map(|i| vec![i]).collect();
            let mut res = allocation_at(inst, &beta, &groups)?;
            res.iterations = trace.iterations;
            let ok = res.gap <= args.gap_tol;
            (res, ok)
        }
        SolveMode::Ellipsoid => {
            let cfg = EllipsoidConfig {
                epsilon: args.epsilon,
                max_iter: args.max_iter,
            };
            let er = ellipsoid_solve(inst, &cfg)?;
            (er.to_equilibrium(inst), er.certified)
        }
    })
}

fn cmd_solve(args: SolveArgs) -> anyhow::Result<u8> {
    let inst = load(&args.instance)?;
    let (res, certified) = run_solver(&inst, &args)?;
    write_text(args.out.as_deref(), &res.to_json()?)?;
    if !certified {
        eprintln!(
            "not converged: duality gap {:e} after {} iterations",
            res.gap, res.iterations
        );
        return Ok(2);
    }
    Ok(0)
}

fn cmd_verify(args: VerifyArgs) -> anyhow::Result<u8> {
    let inst = load(&args.instance)?;
    let res = load_result(&args.result)?;
    if res.beta.len() != inst.n() || res.allocation.intervals.len() != inst.n() {
        bail!("result has {} buyers, instance has {}", res.beta.len(), inst.n());
    }
    let (kkt, fair) = certify(&inst, &res, args.tol);
    let pass = kkt.pass && (inst.mode() == Mode::Quasilinear || fair.pass(args.tol));
    let report = serde_json::json!({ "kkt": kkt, "fairness": fair, "pass": pass });
    write_text(args.out.as_deref(), &serde_json::to_string_pretty(&report)?)?;
    if !pass {
        eprintln!("verification failed: worst KKT residual {:e}", kkt.worst());
        return Ok(2);
    }
    Ok(0)
}

fn cmd_emit_conic(args: EmitConicArgs) -> anyhow::Result<u8> {
    let inst = load(&args.instance)?;
    let cp: ConicProgram = emit_conic_program(&inst);
    let Some(sol) = args.ingest else {
        write_text(args.out.as_deref(), &cp.to_json()?)?;
        return Ok(0);
    };
    let text = std::fs::read_to_string(&sol).with_context(|| format!("reading {}", sol.display()))?;
    let x: Vec<f64> = serde_json::from_str(&text).with_context(|| format!("parsing solution {}", sol.display()))?;
    let u = cp.ingest(&x)?;
    let b = inst.budgets();
    let beta: Vec<f64> = (0..inst.n())
        .map(|i| {
            let total: f64 = u.get(i).map_or(0.0, |r| r.iter().sum());
            (b[i] / total).clamp(inst.beta_lower()[i], 1.0)
        })
        .collect();
    let groups: Vec<Vec<usize>> = (0..inst.n()).map(|i| vec![i]).collect();
    let res = allocation_at(&inst, &beta, &groups)?;
    write_text(args.out.as_deref(), &res.to_json()?)?;
    if res.gap > args.gap_tol {
        eprintln!("ingested solution has duality gap {:e}", res.gap);
        return Ok(2);
    }
    Ok(0)
}

fn cmd_sda(args: SdaArgs) -> anyhow::Result<u8> {
    let inst = load(&args.instance)?;
    let reference = if args.no_reference {
        None
    } else {
        match solve(&inst, &SolveConfig::default()) {
            Ok(r) => Some(r.beta),
            Err(Error::NotConverged { best, .. }) => Some(best.beta),
            Err(e) => return Err(e.into()),
        }
    };
    let trace = sda_run(&inst, args.iterations, args.seed, reference.as_deref());
    let mut out = output(args.out.as_deref())?;
    trace.write_csv(&mut out)?;
    out.flush()?;
    if let (Some(path), Some(r)) = (args.curve.as_deref(), reference.as_deref()) {
        let seeds: Vec<u64> = (0..args.replications as u64).map(|s| args.seed + s).collect();
        let curve = mse_curve(&inst, args.iterations, &seeds, r);
        let mut out = output(Some(path))?;
        writeln!(out, "t,mse,envelope")?;
        for ((t, m), e) in curve.t.iter().zip(&curve.mse).zip(&curve.envelope) {
            writeln!(out, "{t},{m},{e}")?;
        }
        out.flush()?;
        if !curve.below_envelope() {
            eprintln!("mean-square error exceeds the envelope at some checkpoint");
        }
    }
    Ok(0)
}

fn cmd_ellipsoid(args: EllipsoidArgs) -> anyhow::Result<u8> {
    let inst = load(&args.instance)?;
    let cfg = EllipsoidConfig {
        epsilon: args.epsilon,
        max_iter: args.max_iter,
    };
    let res = ellipsoid_solve(&inst, &cfg)?;
    if let Some(path) = args.diagnostics.as_deref() {
        let mut out = output(Some(path))?;
        write_diagnostics_csv(&mut out, &res.diagnostics)?;
        out.flush()?;
    }
    write_text(args.out.as_deref(), &serde_json::to_string_pretty(&res)?)?;
    Ok(if res.certified { 0 } else { 2 })
}

fn cmd_oracle(args: OracleArgs) -> anyhow::Result<u8> {
    let inst = load(&args.instance)?;
    let cfg = OracleConfig {
        cells: args.cells,
        max_rounds: args.max_rounds,
        gap_tol: args.gap_tol,
    };
    match discretized_oracle(&inst, &cfg) {
        Ok(res) => {
            write_text(args.out.as_deref(), &serde_json::to_string_pretty(&res)?)?;
            Ok(0)
        }
        Err(e @ Error::OracleNotConverged { .. }) => {
            eprintln!("{e}");
            Ok(2)
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_sample(args: SampleArgs) -> anyhow::Result<u8> {
    if args.n == 0 || args.k == 0 {
        bail!("--n and --k must be at least 1");
    }
    let doc = sample_document(args.n, args.k, args.seed, args.mode.into());
    write_text(args.out.as_deref(), &serde_json::to_string_pretty(&doc)?)?;
    Ok(0)
}

fn cmd_plot(args: PlotArgs) -> anyhow::Result<u8> {
    let inst = load(&args.instance)?;
    let beta = match args.result.as_deref() {
        Some(p) => load_result(p)?.beta,
        None => match solve(&inst, &SolveConfig::default()) {
            Ok(r) => r.beta,
            Err(Error::NotConverged { best, .. }) => best.beta,
            Err(e) => return Err(e.into()),
        },
    };
    if beta.len() != inst.n() {
        bail!("result has {} buyers, instance has {}", beta.len(), inst.n());
    }
    let mut out = output(args.out.as_deref())?;
    write_plot_csv(&mut out, &inst, &beta, args.points)?;
    out.flush()?;
    Ok(0)
}

fn cmd_bench(args: BenchArgs) -> anyhow::Result<u8> {
    let (ns, ks) = args
        .grid
        .split_once(':')
        .context("--grid must look like N_LIST:K_LIST")?;
    let ns: Vec<usize> = parse_list(ns)?;
    let ks: Vec<usize> = parse_list(ks)?;
    let seeds: Vec<u64> = parse_list(&args.seeds)?;
    if ns.iter().chain(&ks).any(|&x| x == 0) {
        bail!("grid sizes must be at least 1");
    }
    let rows = bench::run_grid(
        &ns,
        &ks,
        &seeds,
        &SolveConfig::default(),
        args.threads.filter(|&t| t > 0),
    )?;
    let mut out = output(args.out.as_deref())?;
    bench::write_csv(&rows, &mut out)?;
    out.flush()?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Verify(a) => cmd_verify(a),
        Command::EmitConic(a) => cmd_emit_conic(a),
        Command::Sda(a) => cmd_sda(a),
        Command::Ellipsoid(a) => cmd_ellipsoid(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::SampleInstance(a) => cmd_sample(a),
        Command::PlotData(a) => cmd_plot(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let mut msg = String::new();
            for cause in e.chain().map(|c| c.to_string()) {
                if !msg.contains(&cause) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&cause);
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
