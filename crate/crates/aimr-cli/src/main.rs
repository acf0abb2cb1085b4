use clap::Parser;

fn main() {
    let cli = aimr_cli::Cli::parse();
    std::process::exit(aimr_cli::run(&cli));
}
