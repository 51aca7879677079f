//! Experiment harness around the `rdsmc` library: declarative TOML
//! configs, replicate orchestration, result tables, and report
//! aggregation.

pub mod config;
pub mod report;
pub mod runner;
