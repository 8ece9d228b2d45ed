use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use tsk_cli::error::EXIT_USAGE;
use tsk_cli::{Cli, CliError};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::usage(e.kind().to_string(), serde_json::json!({"detail": e.to_string()}));
            eprintln!("{}", err.to_json());
            return ExitCode::from(EXIT_USAGE as u8);
        }
    };
    match tsk_cli::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code as u8)
        }
    }
}
