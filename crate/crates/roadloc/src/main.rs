use std::process::ExitCode;

use clap::Parser;
use roadloc::cli::{self, Cli, Diagnostics};

fn main() -> ExitCode {
    match Cli::try_parse() {
        Ok(cli) => ExitCode::from(cli::main(cli)),
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            ExitCode::SUCCESS
        }
        Err(e) => {
            if std::env::args().any(|a| a == "--json") {
                Diagnostics { json: true }.error(1, "usage", e.to_string().trim_end());
            } else {
                let _ = e.print();
            }
            ExitCode::from(1)
        }
    }
}
