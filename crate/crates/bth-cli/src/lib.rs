//! Batch driver for the bigraded Toda hierarchy checks: configuration,
//! verification suites, flow integration runs and machine-readable reports.

pub mod commands;
pub mod config;
pub mod report;
pub mod suites;

pub use commands::{evolve, run_evolve, run_roots, run_verify, verify_records, Exit};
pub use config::{ConfigError, Plan, RunConfig};
pub use report::Record;
pub use suites::Suite;
