//! Large-sample behaviour of `Q̂`: U-statistic parts, variance under
//! dependence, the null law and the test built on it.

mod decision;
mod null;
mod ustat;
mod variance;

pub use decision::{
    asymptotic_power, permutation_critical_value, permutation_statistics, power_lower_bound, run_test,
    BoundVariant, Calibration, TestResult,
};
pub use null::{null_limit_moments, null_moments, NullApprox};
pub use ustat::{ustat_decompose, UStatDecomposition, USTAT_MAX_K};
pub use variance::{variance_expansion, VarianceExpansion};
