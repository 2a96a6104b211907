use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use microhom::cli::{self, CliCommand};

/// Homogenization toolkit for locally periodic elastic microstructures.
#[derive(Parser)]
#[command(name = "microhom", version, about)]
struct Args {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true, default_value = "config.json")]
    config: PathBuf,
    /// Override the configured output directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Suppress the closing status line.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the cell problems at one point and export the effective law.
    Cell,
    /// Macroscopic solve with the homogenized law.
    Homogenize,
    /// Macroscopic solve with the ε-resolved coefficient field.
    Direct,
    /// Direct-vs-homogenized error ladder over a list of ε.
    Converge,
    /// Oracle and invariant suites.
    Verify,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let command = match args.command {
        Command::Cell => CliCommand::Cell,
        Command::Homogenize => CliCommand::Homogenize,
        Command::Direct => CliCommand::Direct,
        Command::Converge => CliCommand::Converge,
        Command::Verify => CliCommand::Verify,
    };
    match cli::execute(command, &args.config, args.output_dir, args.quiet) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("microhom {}: {err}", command.name());
            ExitCode::from(cli::exit_code(&err) as u8)
        }
    }
}
