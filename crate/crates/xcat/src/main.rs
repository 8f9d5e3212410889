use clap::Parser;
use xcat::cli::{execute, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("XCAT_LOG", "info")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    if let Err(e) = execute(&cli, &argv) {
        eprintln!("error: {e:#}");
        std::process::exit(2);
    }
}
