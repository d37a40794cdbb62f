//! Exit-code contract: 0 ok, 1 input error, 2 infeasible class or minimality
//! failure, 3 not converged or not verified.

use std::fmt;

use spi_core::SpiError;

pub const INPUT: i32 = 1;
pub const INFEASIBLE: i32 = 2;
pub const UNVERIFIED: i32 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn input(message: impl Into<String>) -> Self {
        Self { code: INPUT, message: message.into() }
    }

    /// Prefixes the message, e.g. with the file it came from.
    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<SpiError> for Failure {
    fn from(e: SpiError) -> Self {
        let code = match e {
            SpiError::Minimality { .. } | SpiError::EmptyMinimalSet { .. } | SpiError::Infeasible(_) => INFEASIBLE,
            _ => INPUT,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::input(e.to_string())
    }
}
