use clap::Parser;
use mismatch_cli::{main_exit_code, Cli};

fn main() {
    let cli = Cli::parse();
    std::process::exit(main_exit_code(&cli));
}
