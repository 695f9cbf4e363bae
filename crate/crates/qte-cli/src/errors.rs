//! Exit-code discipline for the `qte` binary.
//!
//! Every failure is classified once, close to where it is detected:
//!
//! * usage errors (bad flags, missing subcommand) exit 1 and are handled by
//!   the argument parser in `main`,
//! * validation errors (unreadable input, inconsistent configuration) exit 2,
//! * runtime errors (a computation failed after inputs were accepted) exit 3,
//! * partial results (some replicates failed, aggregates cover the rest) exit 4.

use std::fmt;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;
pub const EXIT_PARTIAL: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    code: u8,
    source: anyhow::Error,
}

impl CliError {
    pub fn validation(source: impl Into<anyhow::Error>) -> Self {
        CliError { code: EXIT_VALIDATION, source: source.into() }
    }

    pub fn runtime(source: impl Into<anyhow::Error>) -> Self {
        CliError { code: EXIT_RUNTIME, source: source.into() }
    }

    pub fn partial(source: impl Into<anyhow::Error>) -> Self {
        CliError { code: EXIT_PARTIAL, source: source.into() }
    }

    pub fn code(&self) -> u8 {
        self.code
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // {:#} prints the whole anyhow context chain on one line.
        write!(f, "{:#}", self.source)
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Attaches an exit-code class to any fallible expression.
pub trait Classify<T> {
    fn or_validation(self) -> CliResult<T>;
    fn or_runtime(self) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn or_validation(self) -> CliResult<T> {
        self.map_err(CliError::validation)
    }

    fn or_runtime(self) -> CliResult<T> {
        self.map_err(CliError::runtime)
    }
}
