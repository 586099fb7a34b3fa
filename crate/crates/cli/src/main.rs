//! `shortcut`: grammar induction, parsing, shortcut mining, diagnostics and
//! reweighting manifests over JSONL corpora.

mod artifacts;
mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{
    ContrastArgs, DiagnoseArgs, InduceArgs, MineArgs, ParseArgs, ReweightArgs, SelfcheckArgs, SynthArgs,
};

#[derive(Parser, Debug)]
#[command(name = "shortcut", version, about = "Grammar-based shortcut discovery for text classification data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a grammar on a labeled corpus.
    Induce(InduceArgs),
    /// Write the most likely tree of every example.
    Parse(ParseArgs),
    /// Rank subtree and rule features by mutual information with the label.
    Mine(MineArgs),
    /// Split data by mined features and score classifier predictions.
    Diagnose(DiagnoseArgs),
    /// Generate rule-based contrast sets and their error rate.
    Contrast(ContrastArgs),
    /// Write robust-training manifests.
    Reweight(ReweightArgs),
    /// Run the built-in consistency suites.
    Selfcheck(SelfcheckArgs),
    /// Write the bundled synthetic corpus with a planted shortcut.
    Synth(SynthArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let argv = match config::expand_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => return report(&e),
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("ERROR E_USAGE: {first}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Induce(a) => commands::induce(a),
        Command::Parse(a) => commands::parse(a),
        Command::Mine(a) => commands::mine(a),
        Command::Diagnose(a) => commands::diagnose(a),
        Command::Contrast(a) => commands::contrast(a),
        Command::Reweight(a) => commands::reweight(a),
        Command::Selfcheck(a) => commands::selfcheck(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}

/// Prints `ERROR <CODE>: detail` on one line.
fn report(e: &anyhow::Error) -> ExitCode {
    let code = artifacts::error_code(e);
    let detail = format!("{e:#}").replace('\n', " ");
    eprintln!("ERROR {code}: {detail}");
    ExitCode::from(1)
}
