//! `tgnv2`: exact-machine verification, expressivity counterexamples,
//! heuristic baselines, training and evaluation from the command line.

mod commands;
mod settings;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use settings::{Common, UsageError};

#[derive(Debug, Parser)]
#[command(name = "tgnv2", version, about = "Temporal graph networks for dynamic node affinity prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check exact machines against brute-force per-pair statistics
    VerifyExact(commands::VerifyExactArgs),
    /// Run the message-anonymity counterexample against TGN and the exact TGNv2 machines
    Counterexample(commands::CounterexampleArgs),
    /// Score heuristic baselines window by window
    Heuristics(commands::HeuristicsArgs),
    /// Train a TGN or TGNv2 model
    Train(commands::TrainArgs),
    /// Evaluate one predictor (heuristic, exact machine or checkpoint)
    Eval(commands::EvalArgs),
    /// Write a seeded synthetic event stream and its labels
    Generate(commands::GenerateArgs),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::VerifyExact(a) => &a.common,
            Command::Counterexample(a) => &a.common,
            Command::Heuristics(a) => &a.common,
            Command::Train(a) => &a.common,
            Command::Eval(a) => &a.common,
            Command::Generate(a) => &a.common,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json = cli.command.common().json;
    let result = match &cli.command {
        Command::VerifyExact(a) => commands::verify_exact(a),
        Command::Counterexample(a) => commands::counterexample(a),
        Command::Heuristics(a) => commands::heuristics(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Generate(a) => commands::generate(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let usage = e.downcast_ref::<UsageError>().is_some();
            if json {
                println!("{}", serde_json::json!({ "error": format!("{e:#}"), "usage": usage }));
            }
            eprintln!("error: {e:#}");
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
