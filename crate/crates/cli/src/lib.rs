//! Command-line front end: scenario files, result tables and the `maccoop` commands.

pub mod commands;
pub mod output;
pub mod scenario_file;

pub use commands::{execute, Cli};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    /// Bad input; exit code 1.
    User(String),
    /// A solver failed on valid input; exit code 2.
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::User(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<maccoop_core::Error> for CliError {
    fn from(e: maccoop_core::Error) -> Self {
        if e.is_user_error() {
            CliError::User(e.to_string())
        } else {
            CliError::Numerical(e.to_string())
        }
    }
}
