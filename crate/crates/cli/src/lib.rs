//! Command line front end for the allocation library.
//!
//! The binary is a thin wrapper around two modules that integration tests
//! can drive in-process: [`config`] parses flat `key = value` run
//! configurations into market models and objectives, and [`runner`]
//! executes the four run kinds (solve, validate, figure1, mv-compare) and
//! writes their CSV tables.
//!
//! Every failure carries one of three process exit codes: 2 for a
//! malformed configuration or misused flags, 3 for solver, simulation, or
//! I/O failures, and 4 for a validation run that exceeded its tolerance.
//! Success exits with 0.

use std::fmt;

pub mod config;
pub mod runner;

/// CLI failure tagged with its process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Malformed configuration or misused flags (exit 2).
    Config(String),
    /// Solver, simulation, or I/O failure (exit 3).
    Engine(String),
    /// A validation threshold was exceeded (exit 4).
    Validation(String),
}

impl CliError {
    /// The process exit code this error maps to.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Engine(_) => 3,
            CliError::Validation(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Engine(msg) => write!(f, "run failed: {msg}"),
            CliError::Validation(msg) => write!(f, "validation failed: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<tc_alloc_core::Error> for CliError {
    fn from(err: tc_alloc_core::Error) -> Self {
        CliError::Engine(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
