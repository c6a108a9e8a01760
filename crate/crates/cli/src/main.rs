//! Command-line surface for attentive time warping: synthetic data
//! generation, the three training schedules, evaluation, and pairwise
//! distances. Exit codes are a stable contract for scripting:
//! 0 success, 1 usage error, 2 data/config error, 3 numerical failure.

mod checkpoint;
mod cmd_dist;
mod cmd_eval;
mod cmd_synth;
mod cmd_train;
mod config;
mod error;
mod io;
mod prep;
mod scorer;
mod trace;

use clap::{Parser, Subcommand};
use error::Result;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "attwarp",
    version,
    about = "Attentive time warping: training, evaluation, and warping distances"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate deterministic synthetic datasets.
    Synth(cmd_synth::SynthArgs),
    /// Pre-train the attention module to mimic warping paths.
    Pretrain(cmd_train::CommonTrainArgs),
    /// Train the attention module with the dual contrastive loss.
    Train(cmd_train::TrainArgs),
    /// Run the three-step plug-in schedule (encoder + attention).
    Plugin(cmd_train::CommonTrainArgs),
    /// Evaluate a checkpoint or baseline: k-NN error, EER, McNemar.
    Eval(cmd_eval::EvalArgs),
    /// Distance between two series files.
    Dist(cmd_dist::DistArgs),
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(args) => cmd_synth::run(args),
        Command::Pretrain(args) => cmd_train::run_pretrain_cmd(args),
        Command::Train(args) => cmd_train::run_train_cmd(args),
        Command::Plugin(args) => cmd_train::run_plugin_cmd(args),
        Command::Eval(args) => cmd_eval::run(args),
        Command::Dist(args) => cmd_dist::run(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes; everything else
            // is a usage error (exit 1) with the message on stderr.
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let rendered = e.to_string();
            eprint!("{rendered}");
            // Value-parse errors omit clap's usage block; add one so
            // every usage failure shows usage on stderr.
            if !rendered.contains("Usage:") {
                use clap::CommandFactory;
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return ExitCode::from(1);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
