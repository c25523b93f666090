use std::process::ExitCode;

use clap::Parser;
use iml_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.subcommand, &cli.config, cli.workers, &cli.out) {
        Ok(out) => {
            println!("{}", out.artifact.display());
            println!("{}", out.sidecar.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
