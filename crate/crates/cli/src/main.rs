use std::process::ExitCode;

use clap::{Parser, Subcommand};

use aag_cli::commands::{self, AblateArgs, EvalArgs, InspectArgs, Outcome, SynthArgs, TrainArgs};
use aag_cli::exit_code;

#[derive(Parser)]
#[command(name = "aag", version = aag_cli::manifest::VERSION, about = "Single-frame action anticipation on precomputed embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic dataset.
    Synth(SynthArgs),
    /// Train a model with early stopping on validation top-1.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Train one model per strategy in a grid and tabulate the results.
    Ablate(AblateArgs),
    /// Print the header of an AAGF, AAGC or AAGM file.
    Inspect(InspectArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Inspect(a) => commands::inspect(a),
    };
    match &result {
        Err(e) => eprintln!("error: {e}"),
        Ok(Outcome::Partial(n)) => eprintln!("{n} grid cell(s) failed"),
        Ok(Outcome::Done) => {}
    }
    ExitCode::from(exit_code(&result) as u8)
}
