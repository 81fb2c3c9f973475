use std::process::ExitCode;

use clap::Parser;

use alma::cli::{self, Cli};

fn main() -> ExitCode {
    let args = match cli::expand_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let parsed = Cli::parse_from(args);
    cli::init_threads();
    match cli::execute(parsed) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
