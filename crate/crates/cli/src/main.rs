use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    match s2o_cli::run(s2o_cli::Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
