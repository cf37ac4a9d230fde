use clap::Parser;
use ga_tradeoff_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("ga-tradeoff: {e}");
        std::process::exit(e.exit_code());
    }
}
