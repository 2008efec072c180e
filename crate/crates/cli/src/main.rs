use clap::Parser;

fn main() {
    std::process::exit(mohardy_cli::run(mohardy_cli::Cli::parse()));
}
