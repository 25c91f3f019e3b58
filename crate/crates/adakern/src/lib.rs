//! File formats, run configuration and the `adakern` command-line tool for
//! the adaptive robust kernel solver in [`adakern_core`].

#![warn(missing_debug_implementations, rust_2018_idioms)]

pub mod cli;
pub mod commands;
pub mod config;
mod error;
pub mod io;
pub mod report;

pub use error::{exit, Error, Result};
