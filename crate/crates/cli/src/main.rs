use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use contact_wkam_cli::{parse_config, run, Command, RunError};

/// Weak KAM solvers for contact Hamiltonian systems on flat tori.
#[derive(Parser)]
#[command(name = "contact-wkam", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(clap::Args)]
struct Target {
    /// Run configuration (`key = value` lines).
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Sub {
    /// Check convexity, monotonicity in u and Legendre duality on a sample box.
    Audit(Target),
    /// Compute u- and u+ with residual and convergence histories.
    Solve(Target),
    /// Write slices of an implicit action function.
    Action(Target),
    /// Estimate the projected Aubry set and classify its recurrent part.
    Aubry(Target),
    /// Integrate the contact flow, optionally along a calibrated curve.
    Flow(Target),
    /// Search for a level a with zero critical value.
    Admissible(Target),
    /// Run the seeded property suite.
    Verify(Target),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, target) = match cli.command {
        Sub::Audit(t) => (Command::Audit, t),
        Sub::Solve(t) => (Command::Solve, t),
        Sub::Action(t) => (Command::Action, t),
        Sub::Aubry(t) => (Command::Aubry, t),
        Sub::Flow(t) => (Command::Flow, t),
        Sub::Admissible(t) => (Command::Admissible, t),
        Sub::Verify(t) => (Command::Verify, t),
    };
    match execute(command, target) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(command: Command, target: Target) -> Result<(), RunError> {
    let mut cfg = parse_config(&target.config)?;
    if let Some(out) = target.out {
        cfg.output_dir = out;
    }
    let mut stdout = std::io::stdout();
    match cfg.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| {
                    RunError::Core(contact_wkam::Error::Numerical(format!(
                        "cannot start {n} worker threads: {e}"
                    )))
                })?;
            pool.install(|| run(command, &cfg, &mut stdout))
        }
        None => run(command, &cfg, &mut stdout),
    }
}
