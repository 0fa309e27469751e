use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = bist::cli::Cli::parse();
    let stdout = std::io::stdout();
    match bist::cli::execute(cli, &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
