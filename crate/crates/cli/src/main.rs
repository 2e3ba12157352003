use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = hsissl::Cli::parse();
    if let Err(e) = hsissl::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
