use clap::Parser;

fn main() {
    let cli = beexformer::cli::Cli::parse();
    if let Err(e) = beexformer::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
