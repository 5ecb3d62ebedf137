use clap::Parser;

fn main() {
    let cli = cotgate_cli::Cli::parse();
    if let Err(e) = cotgate_cli::execute(cli) {
        eprintln!("error: {e}");
        std::process::exit(cotgate_cli::exit_code(&e));
    }
}
