//! `mdlm-decode`: decoding, posterior sampling, chain scoring, benchmarks
//! and protocol checks for masked diffusion language models.

mod commands;
mod config;
mod error;
mod output;

use clap::{Parser, Subcommand};
use commands::{bench, check, decode, posterior, score, train};
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "mdlm-decode", version, about = "Inference for masked diffusion language models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Decode one session per configured context and write their traces
    Decode(decode::DecodeArgs),
    /// Sample reasoning with the answer pre-filled
    Posterior(posterior::PosteriorArgs),
    /// Score reasoning chains by the log-probability of the gold answer
    Score(score::ScoreArgs),
    /// Compare policies on a synthetic task
    Bench(bench::BenchArgs),
    /// Train a tabular model on samples of an exact joint
    TrainToy(train::TrainArgs),
    /// Check a model server against the wire protocol
    ServeProtocolCheck(check::CheckArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MDLM_DECODE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Decode(a) => decode::run(a),
        Command::Posterior(a) => posterior::run(a),
        Command::Score(a) => score::run(a),
        Command::Bench(a) => bench::run(a),
        Command::TrainToy(a) => train::run(a),
        Command::ServeProtocolCheck(a) => check::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
