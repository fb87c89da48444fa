//! Configuration, file formats, the verification suite and the CLI commands.

pub mod commands;
pub mod config;
pub mod io;
pub mod verify;
