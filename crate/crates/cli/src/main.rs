use std::io::Write;

use clap::Parser;
use scrapsight_cli::{Cli, Exit, THREADS_ENV};

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let threads = std::env::var(THREADS_ENV).ok();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let code = match scrapsight_cli::run(&cli, threads.as_deref(), &mut out) {
        Ok(exit) => exit.code(),
        Err(e) => {
            eprintln!("error: {e:#}");
            Exit::Failure.code()
        }
    };
    let _ = out.flush();
    std::process::exit(code);
}
