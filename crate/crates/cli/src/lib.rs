//! Library side of the `mdlreg` binary: configuration resolution, output
//! formatting, dataset/bank file formats, and the command implementations.
//! The binary in `main.rs` is a thin clap wrapper over [`commands`].

pub mod bank_io;
pub mod commands;
pub mod config;
pub mod datasets;
pub mod output;
pub mod sandwich;

/// Environment variable naming the directory that holds dataset files.
pub const DATA_DIR_ENV: &str = "MDLREG_DATA_DIR";
