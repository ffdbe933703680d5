//! Command-line front end: scenario files, generator tables and the subcommands.

pub mod commands;
pub mod generators;
pub mod scenario;
