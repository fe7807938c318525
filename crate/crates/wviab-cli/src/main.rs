use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wviab_cli::{commands::run_w1, dispatch, parse_file, CliError, Command};

/// Viability toolkit for continuity inclusions in the 1-Wasserstein space.
#[derive(Parser)]
#[command(name = "wviab", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Run {
    /// Scenario file (TOML).
    scenario: PathBuf,
    /// Directory for CSV artifacts.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Exact W1 between two measure CSV files.
    W1 {
        a: PathBuf,
        b: PathBuf,
        /// Also write the optimal plan as `plan.csv` here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the inclusion and sample the reachable set.
    Simulate(Run),
    /// Pointwise and integral tangency probes.
    Probe(Run),
    /// Uniform-mesh viable trajectory.
    ConstructLipschitz(Run),
    /// Admissible triples for the usc construction.
    ConstructUsc(Run),
    /// Distance envelope over sampled solutions.
    Gronwall(Run),
    /// Scalar counterexample and upper-estimate draws.
    Counterexample(Run),
    /// Oracle cross-check suite.
    Verify(Run),
}

fn threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("WVIAB_THREADS") else { return Ok(()) };
    let n: usize = raw.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
        CliError::Config(wviab_cli::ConfigError { key: "WVIAB_THREADS".into(), message: format!("`{raw}` is not a positive integer") })
    })?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Io(e.to_string()))
}

fn run(cli: Cli) -> Result<String, CliError> {
    threads()?;
    let (cmd, args) = match cli.cmd {
        Cmd::W1 { a, b, out } => return run_w1(&a, &b, out.as_deref()),
        Cmd::Simulate(r) => (Command::Simulate, r),
        Cmd::Probe(r) => (Command::Probe, r),
        Cmd::ConstructLipschitz(r) => (Command::ConstructLipschitz, r),
        Cmd::ConstructUsc(r) => (Command::ConstructUsc, r),
        Cmd::Gronwall(r) => (Command::Gronwall, r),
        Cmd::Counterexample(r) => (Command::Counterexample, r),
        Cmd::Verify(r) => (Command::Verify, r),
    };
    let scenario = parse_file(&args.scenario)?;
    dispatch(cmd, &scenario, &args.out)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("wviab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
