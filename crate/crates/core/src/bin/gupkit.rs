use clap::Parser;

use gupkit::cli::{error_json, run, Cli};

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("{}", error_json(&e));
        std::process::exit(1);
    }
}
