use clap::Parser;

fn main() {
    let cli = hnlc_cli::Cli::parse();
    if let Err(e) = hnlc_cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(hnlc_cli::exit_code(&e));
    }
}
