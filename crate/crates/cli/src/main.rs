//! Command-line surface: prompt generation, training, sampling, and
//! evaluation, with a shared JSON config file overridden by flags.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! failure.

mod commands;
mod config;

use clap::{Parser, Subcommand};

use xtalgen::ErrorClass;

#[derive(Parser)]
#[command(
    name = "xtalgen",
    version,
    about = "Text-conditioned joint diffusion over periodic crystals"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Emit one short prompt per dataset record (plus its atom types).
    GenPrompts(commands::gen_prompts::Args),
    /// Train a denoiser and write a checkpoint plus a loss-history CSV.
    Train(commands::train::Args),
    /// Sample crystals from a checkpoint for each prompt.
    Sample(commands::sample::Args),
    /// Compute the evaluation report for generated vs reference sets.
    Evaluate(commands::evaluate::Args),
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenPrompts(args) => commands::gen_prompts::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Sample(args) => commands::sample::run(args),
        Command::Evaluate(args) => commands::evaluate::run(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        let code = match e.class() {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numeric => 4,
        };
        std::process::exit(code);
    }
}
