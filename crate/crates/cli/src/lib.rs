//! Command-line pipeline (clean, stats, train, eval, predict) and the HTTP
//! prediction service built on `itk-core`.

pub mod commands;
pub mod config;
pub mod error;
pub mod service;

pub use error::{CliError, Result};
