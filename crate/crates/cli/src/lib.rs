//! Command-line front end and HTTP/WebSocket API over the coolguard pipeline.

pub mod api;
pub mod commands;
pub mod tables;

pub use commands::{run, Cli, CliError};
