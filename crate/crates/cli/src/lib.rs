//! `flame` command-line driver.

pub mod args;
pub mod backends;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

pub use args::Cli;
pub use error::CliError;
