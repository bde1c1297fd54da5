//! Batch runner for the checks of `czlab-core`: configuration files, corpus
//! generation, report output and the binary field and bundle formats.

pub mod acceptance;
pub mod bundle;
pub mod commands;
pub mod config;
pub mod fieldio;
pub mod output;
pub mod runner;
