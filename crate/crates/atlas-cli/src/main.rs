//! Command-line entry point for the spatiotemporal atlas toolkit.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/configuration error,
//! 3 numerical divergence during optimization.

mod commands;
mod record;

use clap::Parser;

fn main() {
    let cli = match commands::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            // Help and version requests terminate successfully; everything
            // else is a malformed invocation.
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                std::process::exit(0);
            }
            eprint!("{e}");
            std::process::exit(1);
        }
    };
    if let Err(err) = commands::run(cli) {
        eprintln!("error: {err}");
        std::process::exit(commands::exit_code(&err));
    }
}
