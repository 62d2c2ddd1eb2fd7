//! Library half of the `scrapsight` binary: argument types, layered
//! configuration and one function per subcommand. Commands write their
//! primary output to the supplied writer and return an [`Exit`] status.

pub mod args;
pub mod commands;
pub mod config;
pub mod output;

use std::io::Write;

use anyhow::Result;

pub use args::{Cli, Command, ModelCommand};
pub use commands::{cmd_augment, cmd_classify, cmd_detect, cmd_evaluate, cmd_inspect, cmd_render};
pub use config::{Format, RunConfig, Settings, THREADS_ENV};

/// Process exit status.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exit {
    Success = 0,
    /// `classify` found an MPPEH or INDETERMINATE image.
    Unsafe = 1,
    /// Configuration, model or other fatal error.
    Failure = 2,
    /// Some inputs failed; the rest were processed.
    Partial = 3,
}

impl Exit {
    pub fn code(self) -> i32 {
        self as i32
    }
}

/// Resolves settings (flags, then `SCRAPSIGHT_THREADS`, then the config
/// file, then defaults) and runs the command.
pub fn run(cli: &Cli, threads_env: Option<&str>, out: &mut dyn Write) -> Result<Exit> {
    let file = match &cli.config {
        Some(path) => Settings::from_file(path)?,
        None => Settings::default(),
    };
    let settings = cli
        .command
        .settings()
        .over(Settings::from_env_value(threads_env)?)
        .over(file);
    let config = RunConfig::resolve(settings)?;
    log::debug!("{config:?}");
    match &cli.command {
        Command::Augment(_) => cmd_augment(&config, out),
        Command::Model(ModelCommand::Inspect(_)) => cmd_inspect(&config, out),
        Command::Detect(a) => cmd_detect(&config, &a.images, out),
        Command::Evaluate(_) => cmd_evaluate(&config, out),
        Command::Classify(a) => cmd_classify(&config, &a.images, out),
        Command::Render(_) => cmd_render(&config, out),
    }
}
