//! Command implementations behind the `ccpd` binary.

pub mod cli;
pub mod commands;
pub mod config;
pub mod output;

pub use cli::{Cli, Command};
