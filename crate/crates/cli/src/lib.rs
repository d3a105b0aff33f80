//! `avdn` command line: generate, train, eval, fuse, score, report, serve.

pub mod commands;
pub mod server;

pub use commands::{run, Cli, Command};
