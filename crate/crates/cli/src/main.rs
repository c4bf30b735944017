use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = prefloss::args::Cli::parse();
    match prefloss::run::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
