//! Files, formats and the command-line tool around `efoent-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod graph_io;
pub mod parallel;
pub mod plot;
pub mod report;

pub use error::{Error, ErrorKind, Result};
