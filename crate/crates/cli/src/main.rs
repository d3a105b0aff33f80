use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = avdn_cli::Cli::parse();
    match avdn_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
