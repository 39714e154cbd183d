use clap::Parser;

fn main() {
    let cli = cubepose_cli::Cli::parse();
    let mut stdout = std::io::stdout().lock();
    if let Err(e) = cubepose_cli::run(cli, &mut stdout) {
        eprintln!("cubepose: {e}");
        std::process::exit(e.exit_code());
    }
}
