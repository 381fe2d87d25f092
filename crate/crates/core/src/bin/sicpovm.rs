use std::process::ExitCode;

use clap::Parser;
use sicpovm::cli::{run_scenario, Scenario};

fn main() -> ExitCode {
    let scenario = Scenario::parse();
    let mut stdout = std::io::stdout().lock();
    match run_scenario(&scenario, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sicpovm: error: {e}");
            ExitCode::FAILURE
        }
    }
}
