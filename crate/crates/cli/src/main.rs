//! `iro`: experiment runner for value-guided iterative reweighting.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod artifacts;
mod compare;
mod config;
mod report;
mod run;

/// A bad flag, config or input path. Exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Property or comparison failure. Exits with status 1 without an error
/// message of its own; the command has already printed its findings.
#[derive(Debug)]
pub struct Failed;

impl std::fmt::Display for Failed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("one or more checks failed")
    }
}

impl std::error::Error for Failed {}

#[derive(Parser)]
#[command(name = "iro", version, about = "Value-guided iterative reweighting on synthetic token MDPs")]
struct Cli {
    /// Cap on worker threads; 1 is the sequential reference.
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    workers: Option<u16>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the iterative loop described by a config file.
    RunIro {
        #[arg(long)]
        config: PathBuf,
        /// Run directory (overrides the config and $IRO_OUTPUT_ROOT).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from checkpoint.json in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Best-of-N baseline on the config's instance.
    RunBon {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        n: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed-form and measured cost of guided search versus BoN at matched success.
    CompareCost(compare::CompareArgs),
    /// Run the property suites.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Plot-ready series from a finished run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

fn verify(suite: &str, seed: u64) -> anyhow::Result<()> {
    if !iro_core::verify::is_known_suite(suite) {
        return Err(UsageError(format!(
            "unknown suite '{suite}'; expected all or one of: {}",
            iro_core::verify::SUITES.join(", ")
        ))
        .into());
    }
    let checks = iro_core::verify::run_suite(suite, seed)?;
    for c in &checks {
        println!("{} {:<24} {} | {}", c.status.label(), c.suite, c.name, c.measured);
    }
    let failed = checks
        .iter()
        .filter(|c| c.status == iro_core::verify::Status::Fail)
        .count();
    let asserted = checks
        .iter()
        .filter(|c| c.status != iro_core::verify::Status::Info)
        .count();
    println!("{} of {asserted} properties passed", asserted - failed);
    if failed > 0 {
        return Err(Failed.into());
    }
    Ok(())
}

fn dispatch(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::RunIro { config, out, resume } => run::run_iro(&config, out, resume),
        Command::RunBon { config, n, out } => run::run_bon(&config, n, out),
        Command::CompareCost(args) => compare::compare_cost(&args),
        Command::Verify { suite, seed } => verify(&suite, seed),
        Command::Report { run } => report::report(&run),
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match e.downcast_ref::<iro_core::Error>() {
        Some(
            iro_core::Error::InvalidConfig(_)
            | iro_core::Error::InvalidSpec(_)
            | iro_core::Error::IndivisibleChunk { .. }
            | iro_core::Error::ScheduleDomain(_),
        ) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let workers = cli.workers.map(usize::from);
    let result = match workers {
        Some(n) => iro_core::exec::with_workers(n, || dispatch(cli.command)),
        None => dispatch(cli.command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if e.downcast_ref::<Failed>().is_none() {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
