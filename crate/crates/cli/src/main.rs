use std::io;
use std::process::ExitCode;

use clap::Parser;
use hmor_cli::{run, Cli, CliError};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HMOR_LOG", "error")).init();
    let cli = Cli::parse();
    match run(&cli, &mut io::stdout().lock()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(CliError::EXIT_CHECK_FAILED),
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
