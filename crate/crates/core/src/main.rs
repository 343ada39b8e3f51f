use clap::Parser;

fn main() {
    let cli = koopctl::cli::Cli::parse();
    std::process::exit(koopctl::cli::run(cli));
}
