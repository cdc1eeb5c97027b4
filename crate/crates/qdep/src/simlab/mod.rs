//! Seeded Monte Carlo experiments: data generators, bandwidth and sample-size
//! sweeps, null-law simulation and the summary statistics they report.
//!
//! Replicate `r` of a scenario is always drawn from the ChaCha8 stream
//! `(seed, r)`, so any result is a pure function of its inputs and does not
//! depend on how many worker threads ran it.

mod nulllaw;
mod scenario;
pub mod stats;
mod sweep;

pub use nulllaw::{compare_calibrations, estimate_null_law, CalibrationComparison, NullLawSummary, QqPoint};
pub use scenario::{generate, Generator, Marginal, Scenario, SimError};
pub use sweep::{replicate_stream, run_sweep, Cell, RuntimeStats, SweepPlan, SweepResult, MIN_REPLICATES};
pub(crate) use sweep::family_name;
