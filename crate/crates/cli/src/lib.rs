//! Command-line driver: `fit`, `run`, `compare` and `report`, plus a log
//! generator and a reference stdio policy server.

pub mod commands;
pub mod config;
pub mod plugin;

use std::fmt;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NOT_CONVERGED: i32 = 4;
pub const EXIT_POLICY_FAULT: i32 = 5;
pub const EXIT_DISAGREE: i32 = 6;

/// An error together with the process exit code it maps to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { code: EXIT_DATA, message: message.into() }
    }

    pub fn policy_fault(message: impl Into<String>) -> Self {
        Self { code: EXIT_POLICY_FAULT, message: message.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}
