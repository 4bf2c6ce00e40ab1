mod commands;

use std::process::ExitCode;

use clap::Parser;
use serde_json::json;

use commands::{Cli, CliError};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default();
            let message = first.strip_prefix("error: ").unwrap_or(first);
            return report(&CliError::usage(message));
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}

fn report(e: &CliError) -> ExitCode {
    let mut body = json!({ "code": e.code, "message": e.message });
    if let Some((line, column)) = e.location {
        body["location"] = json!({ "line": line, "column": column });
    }
    if let Some(path) = &e.path {
        body["path"] = json!(path);
    }
    eprintln!("{}", json!({ "error": body }));
    ExitCode::from(e.exit)
}
