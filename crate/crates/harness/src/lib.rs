//! Config-driven experiments comparing networks that differ in one hidden
//! activation.

pub mod config;
pub mod report;
pub mod runner;
