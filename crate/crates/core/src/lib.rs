//! Kernel-based quadratic dependence measure for `K >= 2` real variables.
//!
//! The measure compares the kernel-smoothed joint law of `(Y_1, ..., Y_K)` with
//! the product of the kernel-smoothed marginals. It is zero exactly when the
//! variables are mutually independent. Everything here is expressed through the
//! auto-convolved kernel `K2` (see [`kernels`]), so the estimator is a handful of
//! `O(K N^2)` double sums.
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`kernels`] | the three admissible `K2` kernels, Fourier transforms, derivatives, L² norms |
//! | [`estimator`] | [`Sample`], scale factors, `Q̂`, its gradient and the characteristic-function route |
//! | [`asymptotics`] | U-statistic decomposition, variance expansion, null law, test decision |
//! | [`oracle`] | exact `Q` for discrete and Gaussian laws, density limit, naive reference estimator |
//!
//! The crate is `no_std` with `alloc`. Enable `parallel` to spread the `N^2`
//! sums over rayon workers; results are bit-identical to the serial path.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod asymptotics;
pub mod error;
pub mod estimator;
pub mod kernels;
pub mod oracle;
pub mod quad;
pub mod special;
pub mod sum;

pub use asymptotics::{
    asymptotic_power, null_moments, power_lower_bound, run_test, ustat_decompose,
    variance_expansion, BoundVariant, Calibration, NullApprox, TestResult, UStatDecomposition,
    VarianceExpansion,
};
pub use error::{Error, Result};
pub use estimator::{
    estimate_q, estimate_q_cf, pi_hat_joint, q_gradient, scale_factors, QEstimate,
    QuadratureSettings, Sample, ScaleFactors, ScaleMode,
};
pub use kernels::{KernelFamily, KernelSpec};
pub use oracle::{exact_q_discrete, exact_q_gaussian, naive_q, DiscreteJoint};
