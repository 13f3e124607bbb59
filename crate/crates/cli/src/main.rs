//! `cresp-lab`: generate instances, train encoders, probe them and run the
//! oracle suite.
//!
//! Exit codes: 0 success, 1 a verification check failed, 2 usage or I/O error.

use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod cmd;
mod io;

#[derive(Parser, Debug)]
#[command(name = "cresp-lab", version, about = "Reward-sequence representation experiments on synthetic Block MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a Block MDP instance and check its invariants.
    Gen(cmd::gen::GenArgs),
    /// Train an encoder under one objective.
    Train(cmd::train::TrainArgs),
    /// Run the oracle property suite.
    Verify(cmd::verify::VerifyArgs),
    /// Probe frozen encoders for environment and state information.
    Probe(cmd::probe::ProbeArgs),
}

const THREADS_VAR: &str = "CRESP_LAB_THREADS";

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(v) = std::env::var(THREADS_VAR) {
        match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                cresp_core::par::configure_threads(n);
            }
            _ => {
                eprintln!("error: {THREADS_VAR} must be a positive integer, got '{v}'");
                return ExitCode::from(2);
            }
        }
    }
    let result = match cli.command {
        Command::Gen(a) => cmd::gen::run(&a),
        Command::Train(a) => cmd::train::run(&a),
        Command::Verify(a) => cmd::verify::run(&a),
        Command::Probe(a) => cmd::probe::run(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
