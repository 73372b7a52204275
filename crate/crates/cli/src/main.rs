use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = ddlab_cli::Cli::parse();
    match ddlab_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::FAILURE
        }
    }
}
