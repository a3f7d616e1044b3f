//! Library side of the `aag` command-line tool.

pub mod commands;
pub mod config;
pub mod manifest;

use aag_core::Error;
use commands::Outcome;

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARTIAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub fn exit_code(result: &Result<Outcome, Error>) -> i32 {
    match result {
        Ok(Outcome::Done) => EXIT_OK,
        Ok(Outcome::Partial(_)) => EXIT_PARTIAL,
        Err(Error::Numerical(_)) => EXIT_NUMERICAL,
        Err(_) => EXIT_USAGE,
    }
}
