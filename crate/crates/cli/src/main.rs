use std::process::ExitCode;

use clap::Parser;
use flame_cli::commands::run;
use flame_cli::Cli;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("flame: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
