use std::io;
use std::process::ExitCode;

use clap::Parser;
use fsel::cli::{self, Cli};

fn main() -> ExitCode {
    let args = Cli::parse();
    let stdout = io::stdout();
    let stderr = io::stderr();
    match cli::run(&args, &mut stdout.lock(), &mut stderr.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
