//! Suite runner, configuration, and emission backing the `condlab` binary.

pub mod config;
pub mod emit;
pub mod plot;
pub mod record;
pub mod suites;
