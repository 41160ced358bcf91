use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use kgdelta::cli::{run_from_text, EXIT_CONFIG, EXIT_OK};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Profile,
    Simulate,
    Shoot,
    Track,
    Variational,
    Check,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Profile => "profile",
            Command::Simulate => "simulate",
            Command::Shoot => "shoot",
            Command::Track => "track",
            Command::Variational => "variational",
            Command::Check => "check",
        }
    }
}

/// Damped Klein-Gordon dynamics with a point interaction.
#[derive(Debug, Parser)]
#[command(name = "kg", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// Key = value configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("kg: cannot read {}: {e}", args.config.display());
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    let outcome = run_from_text(args.command.name(), &text, &args.out);
    for path in &outcome.artifacts {
        println!("{}", path.display());
    }
    if let Some(msg) = &outcome.message {
        eprintln!("kg {}: {msg}", args.command.name());
    }
    if outcome.exit_code != EXIT_OK {
        eprintln!("kg {}: exit {}", args.command.name(), outcome.exit_code);
    }
    ExitCode::from(outcome.exit_code as u8)
}
