use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BURSTLAB_LOG", "warn")).init();
    let cli = burstlab_cli::Cli::parse();
    if let Err(e) = burstlab_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
