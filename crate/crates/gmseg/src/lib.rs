//! IO, configuration and command plumbing around `gmseg-core`: dataset
//! directories, checkpoint files, the flat key = value configuration format,
//! chart rendering and the six CLI subcommands.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod plot;
