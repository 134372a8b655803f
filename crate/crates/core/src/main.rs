use std::process::ExitCode;

use clap::Parser;
use interaction_mi::cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            for p in &outcome.written {
                eprintln!("wrote {}", p.display());
            }
            for msg in &outcome.partial {
                eprintln!("failed: {msg}");
            }
            ExitCode::from(outcome.exit_code())
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
