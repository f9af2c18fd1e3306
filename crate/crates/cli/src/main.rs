mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;
use uwhdn_core::Error;

use args::{Cli, Command};
use commands::CliError;

fn exit_code(e: &CliError) -> u8 {
    match e {
        CliError::Usage(_) => 2,
        CliError::Partial { .. } => 1,
        CliError::Core(e) => match e {
            Error::InvalidParam(_)
            | Error::Config(_)
            | Error::Manifest(_)
            | Error::Split(_)
            | Error::Shape(_)
            | Error::Checkpoint { .. } => 2,
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
            Error::Diverged { .. } | Error::NonFinite(_) => 3,
            _ => 1,
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::PrepareData(a) => commands::prepare_data(a),
        Command::Train(a) => commands::train(a),
        Command::Restore(a) => commands::restore(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Diagnose(a) => commands::diagnose(a),
        Command::Synthesize(a) => commands::synthesize(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Core(Error::Diverged {
                last_checkpoint: Some(p),
                ..
            }) = &e
            {
                eprintln!("last good checkpoint: {}", p.display());
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
