//! Command-line front end: configuration loading, command dispatch and output.

pub mod app;
pub mod commands;
pub mod config;
