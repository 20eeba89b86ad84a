use clap::Parser;

use deltabench::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
