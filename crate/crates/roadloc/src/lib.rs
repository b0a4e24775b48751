//! File formats, evaluation harness and command line around `roadloc-core`.

pub use roadloc_core as core;

pub mod bench;
pub mod cli;
pub mod config;
pub mod io;
pub mod localize;
pub mod plot;
pub mod register;
