use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = musvm::cli::Cli::parse();
    let code = match musvm::cli::run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("musvm {}: {e}", cli.command.name());
            musvm::cli::exit_code(&e)
        }
    };
    std::process::exit(code);
}
