use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mfg_cli::{run, Command};

/// Solvers for first-order mean field games with non-monotone costs.
#[derive(Parser)]
#[command(name = "mfg", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Cmd {
    /// Static equilibrium by damped best response.
    Static(Args),
    /// Ergodic triple (c, v, m) for a static equilibrium.
    Ergodic(Args),
    /// Finite-horizon equilibrium.
    Evolve(Args),
    /// Horizon sweep and asymptotic diagnostics.
    Sweep(Args),
    /// Numerical checks of the model assumptions.
    Validate(Args),
}

#[derive(clap::Args)]
struct Args {
    /// Experiment config (TOML).
    config: PathBuf,
    /// Output directory; defaults to `output_dir` from the config, relative to the config file.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let (command, args) = match cli.command {
        Cmd::Static(a) => (Command::Static, a),
        Cmd::Ergodic(a) => (Command::Ergodic, a),
        Cmd::Evolve(a) => (Command::Evolve, a),
        Cmd::Sweep(a) => (Command::Sweep, a),
        Cmd::Validate(a) => (Command::Validate, a),
    };
    match run(command, &args.config, args.out.as_deref()) {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
