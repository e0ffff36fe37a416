use clap::Parser;
use moana::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
