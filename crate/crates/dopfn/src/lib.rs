//! Files, command line and parallel drivers around `dopfn-core`.
//!
//! Exit codes: 0 success, 1 other failure, 2 invalid case id or usage,
//! 3 unwritable output path, 4 checkpoint, manifest or prior schema mismatch
//! (`--force` overrides where safe), 5 ingest schema violation.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod io;
pub mod manifest;
pub mod report;
pub mod train;

pub use error::{CliError, Result};
