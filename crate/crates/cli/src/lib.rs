//! Library side of the `viewinv` binary, exposed for integration tests.

pub mod config;
pub mod plot;
pub mod report;
pub mod run;
pub mod sweep;

use std::fmt;

/// Config problems exit with 2, everything else with 1.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl From<viewinv_core::Error> for CliError {
    fn from(e: viewinv_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
