use std::process::ExitCode;

use condlab_cli::{config, emit, record, suites};

fn main() -> ExitCode {
    match run() {
        Ok(all_passed) => {
            if all_passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}

/// Returns whether every numerical check passed. Usage and I/O problems are
/// reported through `Err` and exit with code 1.
fn run() -> Result<bool, String> {
    let cfg = config::from_args(std::env::args_os())?;
    let outcome = suites::run(&cfg).map_err(|e| e.to_string())?;
    emit::emit(&cfg, &outcome).map_err(|e| e.to_string())?;
    Ok(record::all_passed(&outcome.records))
}
