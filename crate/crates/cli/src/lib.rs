//! The `ncf` command-line tool: synthetic data, reconstructions, the
//! convergence benchmark and plot scripts.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
