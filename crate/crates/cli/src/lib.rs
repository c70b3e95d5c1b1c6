//! Command-line front end: TOML experiment configs, simulated datasets on
//! disk, reconstruction runs and benchmark tables.

pub mod commands;
pub mod config;
pub mod output;
