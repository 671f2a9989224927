use clap::Parser;

fn main() {
    let cli = fixthresh::Cli::parse();
    if let Err(e) = fixthresh::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(fixthresh::exit_code(&e));
    }
}
