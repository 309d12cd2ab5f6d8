use clap::Parser;

use mfe_cli::{run_to_exit_code, Cli};

fn main() {
    let cli = Cli::parse();
    std::process::exit(run_to_exit_code(&cli));
}
