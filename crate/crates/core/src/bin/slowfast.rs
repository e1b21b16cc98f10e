use clap::Parser;
use slowfast::cli::{execute, Cli};

fn main() {
    std::process::exit(execute(Cli::parse()));
}
