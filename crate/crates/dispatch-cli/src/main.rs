//! `dispatch` — economic dispatch under prohibited operating zones,
//! valve-point ripple, ramp limits, spinning reserve, and network losses.
//!
//! Subcommands: `validate` a case file, `solve` it to an optimal dispatch,
//! `audit` reported dispatches against it, `bench` a suite directory
//! against expected values, and `replicate` a lossless case n-fold.
//!
//! Exit status is nonzero for parse, validation, and infeasibility errors;
//! a solve that stops at its iteration limit still reports (exit 0) but
//! flags the report as not converged.

mod bench;
mod report;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use dispatch_core::audit::{audit_table, AuditOptions};
use dispatch_core::io::{load_case, load_reported, write_case};
use dispatch_core::subproblem::NlpOptions;
use dispatch_core::{replicate_case, solve, validate_case, SearchOptions, ValidatedCase};
use report::{Conditions, Environment, RunReport, UnitRow};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "dispatch",
    version,
    about = "Economic dispatch with prohibited zones, valve-point ripple, ramp limits, reserve, and losses"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a case file, reporting its structure.
    Validate { case: PathBuf },
    /// Solve a case file to an optimal dispatch.
    Solve(SolveArgs),
    /// Recompute loss, cost, and balance violation for reported dispatches.
    Audit(AuditArgs),
    /// Run every case in a suite directory against its expected values.
    Bench(BenchArgs),
    /// Write an n-fold replication of a lossless case.
    Replicate(ReplicateArgs),
}

#[derive(Args)]
struct SolveArgs {
    case: PathBuf,
    /// Drop the loss model for this run.
    #[arg(long)]
    no_loss: bool,
    /// Drop valve-point ripple for this run.
    #[arg(long)]
    no_valve: bool,
    /// Seed for the multi-start sampler.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Starts per subproblem (defaults: 8 smooth, 64 with valve ripple).
    #[arg(long)]
    starts: Option<usize>,
    /// Power-balance tolerance in MW.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// Enumerate exhaustively up to this many zone assignments, branch and
    /// bound above it.
    #[arg(long, default_value_t = 4096)]
    enum_threshold: u128,
    #[command(flatten)]
    format: FormatArgs,
}

#[derive(Args)]
struct AuditArgs {
    case: PathBuf,
    reported: PathBuf,
    /// Reference solve time in seconds; enables the adjusted-CPU-time column
    /// for rows that state their CPU speed and time.
    #[arg(long)]
    act_ref: Option<f64>,
    /// Audit with valve ripple disabled.
    #[arg(long)]
    no_valve: bool,
    /// Audit with the loss model disabled.
    #[arg(long)]
    no_loss: bool,
    #[command(flatten)]
    format: FormatArgs,
}

#[derive(Args)]
struct BenchArgs {
    /// Directory of .case files; expected values are read from a sibling
    /// `expected/` directory.
    suite: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Override starts per subproblem (a faster, weaker pass).
    #[arg(long)]
    starts: Option<usize>,
    /// Emit the table as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ReplicateArgs {
    case: PathBuf,
    /// Number of copies of every unit; demand and reserve scale with it.
    #[arg(short)]
    n: usize,
    /// Output case file.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct FormatArgs {
    /// Emit the report as JSON.
    #[arg(long, conflicts_with = "text")]
    json: bool,
    /// Emit the report as an aligned text table (the default).
    #[arg(long)]
    text: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(threads) = std::env::var("DISPATCH_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("warning: ignoring DISPATCH_THREADS={threads:?} (want a positive integer)");
            }
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Validate { case } => cmd_validate(&case),
        Command::Solve(args) => cmd_solve(&args),
        Command::Audit(args) => cmd_audit(&args),
        Command::Bench(args) => cmd_bench(&args),
        Command::Replicate(args) => cmd_replicate(&args),
    }
}

fn cmd_validate(path: &PathBuf) -> Result<()> {
    let case = load_case(path)?;
    let zones: usize = case.units.iter().map(|u| u.zones.len()).sum();
    let prohibited: usize = case.units.iter().map(|u| u.zones.len() - 1).sum();
    println!(
        "OK {} — {} units, {} zones ({} prohibited bands), demand {} MW",
        case.name,
        case.units.len(),
        zones,
        prohibited,
        case.demand_mw
    );
    println!(
        "   loss model: {}; reserve: {}; valve ripple on {} unit(s)",
        if case.loss.is_some() { "yes" } else { "no" },
        match case.reserve_mw {
            Some(r) => format!("{r} MW"),
            None => "none".to_string(),
        },
        case.units.iter().filter(|u| u.valve.is_some()).count()
    );
    for w in case.warnings() {
        println!("warning: {w}");
    }
    Ok(())
}

/// Apply `--no-loss` / `--no-valve` and re-validate.
fn conditioned(case: ValidatedCase, no_loss: bool, no_valve: bool) -> Result<ValidatedCase> {
    if !no_loss && !no_valve {
        return Ok(case);
    }
    let mut sys = case.into_case();
    if no_loss {
        sys = sys.without_loss();
    }
    if no_valve {
        sys = sys.without_valve();
    }
    Ok(validate_case(sys)?)
}

fn cmd_solve(args: &SolveArgs) -> Result<()> {
    let case = conditioned(load_case(&args.case)?, args.no_loss, args.no_valve)?;
    let opts = SearchOptions {
        nlp: NlpOptions {
            seed: args.seed,
            n_starts: args.starts,
            balance_tol: args.tol,
            ..NlpOptions::default()
        },
        enum_threshold: args.enum_threshold,
        ..SearchOptions::default()
    };
    let started = std::time::Instant::now();
    let sol = solve(&case, &opts)?;
    let wall_time_s = started.elapsed().as_secs_f64();

    // Independent self-audit of the solution we are about to report.
    let self_row = dispatch_core::io::ReportedRow {
        method: "solve".to_string(),
        p_mw: sol.p.clone(),
        loss_mw: Some(sol.loss_mw),
        cost: Some(sol.cost),
        cpu_ghz: None,
        cpu_time_s: None,
    };
    let self_audit = dispatch_core::audit::audit_dispatch(
        case.case(),
        "solve",
        &self_row,
        &AuditOptions::default(),
    )?;

    let units = case
        .units
        .iter()
        .zip(&sol.p)
        .zip(&sol.assignment)
        .map(|((u, &p), &zone)| UnitRow {
            id: u.id,
            p_mw: p,
            zone: zone + 1,
            reserve_mw: u.reserve_available(p),
        })
        .collect();
    let report = RunReport {
        case: case.name.clone(),
        path: args.case.display().to_string(),
        conditions: Conditions::of(case.case()),
        seed: args.seed,
        demand_mw: case.demand_mw,
        reserve_req_mw: case.reserve_mw,
        units,
        solution: sol,
        self_audit,
        environment: Environment {
            threads: rayon::current_num_threads(),
            wall_time_s,
            cpu_ghz: None,
        },
    };
    if args.format.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", report.to_text());
    }
    Ok(())
}

fn cmd_audit(args: &AuditArgs) -> Result<()> {
    let case = load_case(&args.case)?;
    let reported = load_reported(&args.reported)?;
    if let Some(want) = &reported.case {
        let given = args.case.display().to_string();
        if !given.ends_with(want) && !want.ends_with(&given) {
            eprintln!("warning: reported file was written for {want}, auditing against {given}");
        }
    }
    let opts = AuditOptions {
        no_valve: args.no_valve,
        no_loss: args.no_loss,
        act_ref_s: args.act_ref,
    };
    let rows = audit_table(case.case(), &reported, &opts)?;
    if args.format.json {
        println!("{}", serde_json::to_string_pretty(&rows)?);
    } else {
        print!(
            "{}",
            report::audit_text(case.case(), &args.reported.display().to_string(), &rows)
        );
    }
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let rows = bench::run_suite(&args.suite, args.seed, args.starts)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&rows)?);
    } else {
        print!("{}", bench::table_text(&args.suite, args.seed, &rows));
    }
    if rows.iter().any(|r| r.status == bench::Status::Error) {
        anyhow::bail!("one or more cases failed to load or solve");
    }
    Ok(())
}

fn cmd_replicate(args: &ReplicateArgs) -> Result<()> {
    let case = load_case(&args.case)?;
    let replica = replicate_case(case.case(), args.n)?;
    write_case(&replica, &args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "wrote {} — {} units, demand {} MW",
        args.out.display(),
        replica.units.len(),
        replica.demand_mw
    );
    Ok(())
}
