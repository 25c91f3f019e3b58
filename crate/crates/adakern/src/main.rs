use std::process::ExitCode;

use adakern::cli::{run, Cli};
use clap::Parser;

fn main() -> ExitCode {
    match Cli::try_parse() {
        Ok(cli) => ExitCode::from(run(cli)),
        Err(e) => {
            let _ = e.print();
            // usage errors share the input/config code; 2 is reserved for verification
            ExitCode::from(if e.use_stderr() { adakern::exit::INPUT } else { adakern::exit::OK })
        }
    }
}
