//! File formats, run configuration and the `fenwarp` command line on top of
//! [`fenwarp_core`].

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;

pub use error::{CliError, Result};
