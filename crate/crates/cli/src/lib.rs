//! Command-line front end for the paired-crossover pattern-mixture analysis:
//! CSV ingestion, TOML configuration, and JSON reports.

#![warn(missing_docs)]

pub mod commands;
pub mod config;
pub mod data;
pub mod json;
pub mod report;
