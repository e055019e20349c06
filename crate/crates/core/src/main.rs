use std::panic;
use std::process::ExitCode;

use clap::Parser;
use wsil::cli::{run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("wsil: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        // the panic hook has already printed the message
        Err(_) => ExitCode::from(1),
    }
}
