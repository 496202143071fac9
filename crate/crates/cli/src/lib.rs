//! Configuration-driven runner for the fracstab experiments.
//!
//! Each subcommand validates the configuration, delegates to the library and
//! writes CSV (and optionally SVG) outputs plus a `manifest.json` into its own
//! directory under the output root.

pub mod args;
pub mod commands;
pub mod config;
pub mod output;
pub mod svg;

use std::fmt;

pub use args::{Cli, Command};

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: u8 = 0;
    pub const VALIDATION: u8 = 1;
    pub const RUNTIME: u8 = 2;
    pub const VERDICT: u8 = 3;
}

/// Environment variable that overrides the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "FRACSTAB_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            code: exit::VALIDATION,
            kind: "validation",
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: exit::RUNTIME,
            kind: "runtime",
            message: message.into(),
        }
    }

    pub fn verdict(message: impl Into<String>) -> Self {
        Self {
            code: exit::VERDICT,
            kind: "verdict",
            message: message.into(),
        }
    }

    pub(crate) fn from_model_validation(e: fracstab::Error) -> Self {
        Self::validation(e.to_string())
    }

    /// One-line JSON record for stderr and `error.json`.
    pub fn record(&self) -> String {
        serde_json::json!({
            "error": self.kind,
            "exit_code": self.code,
            "message": self.message,
        })
        .to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", self.kind, self.message)
    }
}

impl std::error::Error for CliError {}

impl From<fracstab::Error> for CliError {
    fn from(e: fracstab::Error) -> Self {
        match e {
            fracstab::Error::InvalidParameter { .. } => Self::validation(e.to_string()),
            _ => Self::runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::runtime(format!("i/o: {e}"))
    }
}

/// Run a parsed command line; returns stdout lines on success.
pub fn run(cli: &Cli) -> Result<Vec<String>, CliError> {
    commands::dispatch(cli)
}
