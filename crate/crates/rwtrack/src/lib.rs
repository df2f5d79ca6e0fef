//! File formats, command line and a threaded grid scan around
//! `rwtrack-core`.

pub mod app;
pub mod config;
pub mod error;
pub mod records;
pub mod runner;
pub mod scan;
pub mod wav;

pub use error::{CliError, Result};
