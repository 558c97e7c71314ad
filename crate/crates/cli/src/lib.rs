//! Library side of the `mpse` command-line tool: run configuration and
//! subcommand implementations.

pub mod commands;
pub mod config;
