//! Workbench around `benefit-uq-core`: experiment files, on-disk formats,
//! the staged pipeline and the command-line interface.

pub mod cli;
pub mod config;
pub mod formats;
pub mod pipeline;
