use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use wigner_brw::config::{SimConfig, FIG1_CONFIG};
use wigner_brw::experiment::{self, Prepared, RunOptions};
use wigner_brw::selftest::{self, Fault, SelftestOptions};
use wigner_brw::Error;

#[derive(Parser)]
#[command(name = "wbrw", version, about = "Branching random walk estimators for the backward Wigner equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment matrix and write series.csv and run.meta
    Run(RunArgs),
    /// Solve the reference problem and write field snapshots
    Reference(CommonArgs),
    /// Fast invariant checks
    Selftest(SelftestArgs),
    /// Print xi_breve, alpha_star and the K_V proxy
    Bounds(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration (TOML); the built-in two-dimensional Morse
    /// experiment when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides output.dir
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides run.seed
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads
    #[arg(long, env = "WBRW_WORKERS")]
    workers: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Print the resolved config and bounds, write nothing
    #[arg(long)]
    dry_run: bool,
    /// Dump one family tree per cell under trace/
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct SelftestArgs {
    /// Config whose kernel cache path is exercised
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, hide = true, value_enum)]
    inject_fault: Option<FaultArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    KernelSign,
}

/// Exit status carried through anyhow.
#[derive(Debug)]
struct Exit(u8);

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "exit {}", self.0)
    }
}

impl std::error::Error for Exit {}

fn load_config(path: Option<&Path>) -> anyhow::Result<SimConfig> {
    match path {
        Some(p) => Ok(SimConfig::load(p)?),
        None => Ok(SimConfig::parse(FIG1_CONFIG)?),
    }
}

fn prepare(args: &CommonArgs) -> anyhow::Result<Prepared> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.run.seed = s;
    }
    Ok(experiment::prepare(cfg)?)
}

fn out_dir(args: &CommonArgs, prep: &Prepared) -> PathBuf {
    args.out
        .clone()
        .or_else(|| prep.cfg.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn workers(args: &CommonArgs, prep: &Prepared) -> Option<usize> {
    args.workers.or(prep.cfg.output.workers)
}

fn cmd_run(args: &RunArgs) -> anyhow::Result<()> {
    let prep = prepare(&args.common)?;
    if args.dry_run {
        print!("{}", prep.metadata());
        println!();
        print!("{}", prep.bounds_summary());
        for c in &prep.cells {
            println!("cell {}: gamma0 = {:.6}, n_trees = {}", c.label(), c.gamma0, c.n_trees);
        }
        return Ok(());
    }
    let opts = RunOptions {
        out_dir: out_dir(&args.common, &prep),
        trace: args.trace,
        workers: workers(&args.common, &prep),
    };
    let s = experiment::run(&prep, &opts)?;
    eprintln!("wrote {} rows to {}", s.rows, s.csv.display());
    eprintln!("metadata in {}", s.metadata.display());
    for p in &s.snapshots {
        eprintln!("snapshot {}", p.display());
    }
    Ok(())
}

fn cmd_reference(args: &CommonArgs) -> anyhow::Result<()> {
    let prep = prepare(args)?;
    let dir = out_dir(args, &prep);
    let fields = experiment::with_workers(workers(args, &prep), || prep.reference_fields())?;
    let paths = experiment::write_reference(&prep, &dir, &fields)?;
    for (t, f) in prep.cfg.run.probe_times.iter().zip(&fields) {
        println!("t = {t}: integral = {:.12e}, l2 norm = {:.12e}", f.integral(), f.l2_norm());
    }
    for p in paths {
        eprintln!("snapshot {}", p.display());
    }
    Ok(())
}

fn cmd_selftest(args: &SelftestArgs) -> anyhow::Result<()> {
    let cache = match &args.config {
        Some(p) => load_config(Some(p))?.kernel.cache.map(PathBuf::from),
        None => None,
    };
    let opts = SelftestOptions {
        fault: match args.inject_fault {
            Some(FaultArg::KernelSign) => Fault::KernelSign,
            None => Fault::None,
        },
        cache: cache.as_deref(),
    };
    let results = selftest::run(&opts).context("selftest could not start")?;
    print!("{}", selftest::report(&results));
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        eprintln!("{failed} check(s) failed");
        return Err(Exit(1).into());
    }
    Ok(())
}

fn cmd_bounds(args: &CommonArgs) -> anyhow::Result<()> {
    let prep = prepare(args)?;
    print!("{}", prep.bounds_summary());
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(Exit(c)) = err.downcast_ref::<Exit>() {
        return *c;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::Feasibility(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Reference(a) => cmd_reference(a),
        Command::Selftest(a) => cmd_selftest(a),
        Command::Bounds(a) => cmd_bounds(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if e.downcast_ref::<Exit>().is_none() {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
