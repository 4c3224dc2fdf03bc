use clap::Parser;

fn main() {
    let cli = aibom_cli::Cli::parse();
    let code = aibom_cli::execute(&cli, &mut std::io::stdout().lock(), &mut std::io::stderr().lock());
    std::process::exit(code);
}
