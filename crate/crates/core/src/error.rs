use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("bandwidth must be positive and finite, got {0}")]
    InvalidBandwidth(f64),

    #[error("sample needs at least 2 rows and 2 variables, got {n} x {k}")]
    SampleShape { n: usize, k: usize },

    #[error("ragged sample: row {row} has {got} values, expected {expected}")]
    RaggedSample {
        row: usize,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value at row {row}, variable {col}")]
    NonFinite { row: usize, col: usize },

    #[error("variable {0} is constant; the scale factor is zero")]
    ZeroVariance(usize),

    #[error("invalid scale factor {value} for variable {index}")]
    InvalidScale { index: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("sample too small: N = {n} but at least {required} rows are needed")]
    SampleTooSmall { n: usize, required: usize },

    #[error("{what}: limit is {limit}, got {got}")]
    CostGuard {
        what: &'static str,
        limit: usize,
        got: usize,
    },

    #[error("truncated weight mass {tail:e} exceeds the tolerance budget {budget:e}")]
    TruncationTooTight { tail: f64, budget: f64 },

    #[error("grid too coarse: refinement changed the integral by {rel_change:e} (relative)")]
    GridTooCoarse { rel_change: f64 },

    #[error("quadrature did not converge: {0}")]
    Quadrature(&'static str),

    #[error("null approximation is degenerate (E1 = {e1}, V1 = {v1}); use permutation calibration")]
    DegenerateNull { e1: f64, v1: f64 },

    #[error("alternative value equals the critical value; the power bound is undefined")]
    GapZero,

    #[error("significance level must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid discrete joint: {0}")]
    InvalidJoint(String),
}
