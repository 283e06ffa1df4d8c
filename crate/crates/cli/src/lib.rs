//! Config parsing and subcommands behind the `resinv` binary.

pub mod commands;
pub mod config;

/// Environment variable holding the default worker-thread count.
pub const THREADS_ENV: &str = "RESINV_THREADS";
