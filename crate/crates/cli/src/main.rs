//! `herglotz`: derive, solve, and verify action-dependent variational
//! problems from the command line.

mod commands;
mod manifest;

use clap::{Parser, Subcommand};

use commands::{DemoArgs, DeriveArgs, SolveArgs, VerifyArgs};

#[derive(Parser)]
#[command(
    name = "herglotz",
    version,
    about = "Action-dependent Lagrangians: symbolic equations and desk-scale solvers",
    after_help = "Exit codes: 0 ok, 2 problem-file parse error, 3 non-closed action \
                  dependence where a higher-order derivation needs it, 4 stability violation."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the field equations and action-dependence diagnostics
    Derive(DeriveArgs),
    /// Run the problem's solver block and write the solution artifacts
    Solve(SolveArgs),
    /// Evaluate residuals for a section block or a solved output
    Verify(VerifyArgs),
    /// Run the bundled example problems end to end
    Demo(DemoArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Derive(args) => commands::cmd_derive(args),
        Command::Solve(args) => commands::cmd_solve(args),
        Command::Verify(args) => commands::cmd_verify(args),
        Command::Demo(args) => commands::cmd_demo(args),
    };
    if let Err(failure) = result {
        eprintln!("error: {}", failure.message);
        std::process::exit(failure.code);
    }
}
