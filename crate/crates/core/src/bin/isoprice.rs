use std::process::ExitCode;

use clap::Parser;
use isoprice::cli::{execute, init_threads, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let status = init_threads().and_then(|()| execute(&cli, &mut std::io::stdout().lock()));
    match status {
        Ok(0) => ExitCode::SUCCESS,
        Ok(code) => ExitCode::from(code.clamp(1, 255) as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
