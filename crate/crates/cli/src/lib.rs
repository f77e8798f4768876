//! Library behind the `mimic` binary: run-config parsing and the command
//! implementations, exposed so integration tests can drive the exact same
//! code paths as the CLI.

pub mod commands;
pub mod config;

pub use commands::{
    cmd_corrupt_preview, cmd_decode, cmd_eval, cmd_features_dump, cmd_synth, cmd_train,
};
pub use config::RunConfig;

/// Config errors carry every problem found; runtime errors carry one.
#[derive(Debug)]
pub enum CliError {
    Config(Vec<String>),
    Runtime(mimic::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(errs) => {
                writeln!(f, "configuration invalid ({} problem(s)):", errs.len())?;
                for e in errs {
                    writeln!(f, "  - {e}")?;
                }
                Ok(())
            }
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;

/// Process exit code contract: 0 success, 2 config error, 3 runtime error.
pub fn exit_code(err: &CliError) -> i32 {
    match err {
        CliError::Config(_) => 2,
        CliError::Runtime(_) => 3,
    }
}
