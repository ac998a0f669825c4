use clap::Parser;

fn main() {
    let cli = grainca::cli::Cli::parse();
    let stdout = std::io::stdout();
    if let Err(e) = grainca::cli::run(cli, &mut stdout.lock()) {
        eprintln!("error: {e}");
        std::process::exit(grainca::cli::exit_code(&e));
    }
}
