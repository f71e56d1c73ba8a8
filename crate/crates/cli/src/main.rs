mod cli;
mod commands;
mod io;

use std::process::ExitCode;

use clap::Parser;
use ramac_core::ErrorCategory;

use crate::cli::Cli;

fn category(err: &anyhow::Error) -> ErrorCategory {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<ramac_core::Error>() {
            return e.category();
        }
        if cause.is::<std::io::Error>() || cause.is::<csv::Error>() {
            return ErrorCategory::Io;
        }
    }
    ErrorCategory::Validation
}

/// Context chain joined with ": ", skipping causes already spelled out by their parent.
fn message(err: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if parts.last().is_some_and(|prev| prev.contains(&text)) {
            continue;
        }
        parts.push(text);
    }
    parts.join(": ")
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli =
        match Cli::try_parse_from(std::iter::once("ramac".to_string()).chain(argv.iter().cloned()))
        {
            Ok(cli) => cli,
            Err(e) if e.use_stderr() => {
                let _ = e.print();
                return ExitCode::from(ErrorCategory::Validation.exit_code() as u8);
            }
            Err(e) => {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
        };
    match commands::run(cli.command, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let cat = category(&err);
            eprintln!(
                "{}",
                serde_json::json!({ "error": cat.as_str(), "message": message(&err) })
            );
            ExitCode::from(cat.exit_code() as u8)
        }
    }
}
