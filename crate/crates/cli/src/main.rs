use clap::Parser;

fn main() {
    let cli = fwdcurve_cli::Cli::parse();
    std::process::exit(fwdcurve_cli::run(cli));
}
