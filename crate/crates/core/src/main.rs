use clap::Parser;

fn main() {
    let args = irregular_sde::cli::Args::parse();
    std::process::exit(irregular_sde::cli::run(&args));
}
