//! Simulation harness, file formats and command-line front end for the
//! kernel quadratic dependence test implemented in [`qdep_core`].

pub mod cli;
pub mod io;
pub mod simlab;

pub use qdep_core;

/// Version stamped on reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
