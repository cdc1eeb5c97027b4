//! The admissible auto-convolved kernels `K2 = K * K~`.
//!
//! Only `K2` ever enters the measure, so the base kernel `K` is never built. A
//! valid `K2` must be even with a nonnegative Fourier transform that vanishes at
//! most on a null set. Three families are provided:
//!
//! | name        | `K2(x)`                      | `ψ(t) = ∫ K2(x) e^{itx} dx`       |
//! |-------------|------------------------------|-----------------------------------|
//! | `gaussian`  | `exp(-x²)`                   | `√π exp(-t²/4)`                   |
//! | `cauchy2`   | `1/(1+x²)²`                  | `(π/2)(|t|+1) exp(-|t|)`          |
//! | `cauchy2dd` | `-(20x²-4)/(1+x²)⁴`          | `(π/2) t² (|t|+1) exp(-|t|)`      |
//!
//! The third kernel is minus the second derivative of the second, so its
//! transform is `t²` times the square-Cauchy transform. It takes negative
//! values and is not a density kernel.
//!
//! Bandwidth scaling: `K_h(x) = K(x/h)/h` for the base kernel implies
//! `K2_h(u) = K2(u/h)/h`, whose transform is `ψ(h t)`.

use core::f64::consts::PI;
use core::fmt;
use core::str::FromStr;

use libm::sqrt;

// The platform exponential is several times faster than the portable one and
// dominates the cost of the Gaussian double sums.
#[cfg(feature = "std")]
#[inline(always)]
fn exp(x: f64) -> f64 {
    x.exp()
}
#[cfg(not(feature = "std"))]
use libm::exp;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelFamily {
    Gaussian,
    SquareCauchy,
    NegSecondDerivSquareCauchy,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 3] = [
        KernelFamily::Gaussian,
        KernelFamily::SquareCauchy,
        KernelFamily::NegSecondDerivSquareCauchy,
    ];

    /// Name used on the command line and in config files.
    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::SquareCauchy => "cauchy2",
            KernelFamily::NegSecondDerivSquareCauchy => "cauchy2dd",
        }
    }

    /// Unscaled `K2(x)`.
    #[inline]
    pub fn k2(self, x: f64) -> f64 {
        let x2 = x * x;
        match self {
            KernelFamily::Gaussian => exp(-x2),
            KernelFamily::SquareCauchy => {
                let d = 1.0 + x2;
                1.0 / (d * d)
            }
            KernelFamily::NegSecondDerivSquareCauchy => {
                let d = 1.0 + x2;
                let d2 = d * d;
                (4.0 - 20.0 * x2) / (d2 * d2)
            }
        }
    }

    /// Unscaled `K2'(x)`.
    #[inline]
    pub fn k2_derivative(self, x: f64) -> f64 {
        let x2 = x * x;
        match self {
            KernelFamily::Gaussian => -2.0 * x * exp(-x2),
            KernelFamily::SquareCauchy => {
                let d = 1.0 + x2;
                -4.0 * x / (d * d * d)
            }
            KernelFamily::NegSecondDerivSquareCauchy => {
                let d = 1.0 + x2;
                let d2 = d * d;
                24.0 * x * (5.0 * x2 - 3.0) / (d2 * d2 * d)
            }
        }
    }

    /// Fourier transform of the unscaled `K2`.
    #[inline]
    pub fn fourier(self, t: f64) -> f64 {
        match self {
            KernelFamily::Gaussian => sqrt(PI) * exp(-t * t / 4.0),
            KernelFamily::SquareCauchy => {
                let a = t.abs();
                0.5 * PI * (a + 1.0) * exp(-a)
            }
            KernelFamily::NegSecondDerivSquareCauchy => {
                let a = t.abs();
                0.5 * PI * t * t * (a + 1.0) * exp(-a)
            }
        }
    }

    /// `∫ K2(x)² dx`. Closed forms; the tests check each against quadrature.
    pub fn l2_norm_squared(self) -> f64 {
        match self {
            KernelFamily::Gaussian => sqrt(PI / 2.0),
            KernelFamily::SquareCauchy => 5.0 * PI / 16.0,
            KernelFamily::NegSecondDerivSquareCauchy => 81.0 * PI / 32.0,
        }
    }

    /// Location of the maximum of `ψ` on `t >= 0`.
    fn fourier_argmax(self) -> f64 {
        match self {
            KernelFamily::Gaussian | KernelFamily::SquareCauchy => 0.0,
            // d/dt [t²(t+1)e^{-t}] = 0  <=>  t² - 2t - 2 = 0
            KernelFamily::NegSecondDerivSquareCauchy => 1.0 + sqrt(3.0),
        }
    }

    /// Smallest `T` with `ψ(t) < rel · max ψ` for all `|t| > T`.
    pub fn fourier_cutoff(self, rel: f64) -> f64 {
        let t0 = self.fourier_argmax();
        let target = rel * self.fourier(t0);
        let mut lo = t0;
        let mut hi = t0 + 1.0;
        while self.fourier(hi) >= target {
            lo = hi;
            hi *= 2.0;
        }
        // ψ is decreasing past its maximum
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.fourier(mid) >= target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-12 * hi {
                break;
            }
        }
        hi
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(KernelFamily::Gaussian),
            "cauchy2" => Ok(KernelFamily::SquareCauchy),
            "cauchy2dd" => Ok(KernelFamily::NegSecondDerivSquareCauchy),
            other => Err(Error::InvalidArgument(alloc::format!(
                "unknown kernel '{other}' (expected gaussian, cauchy2 or cauchy2dd)"
            ))),
        }
    }
}

/// A kernel family together with its bandwidth `h > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    h: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, h: f64) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidBandwidth(h));
        }
        Ok(KernelSpec { family, h })
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    /// `K2_h(x) = K2(x/h)/h`.
    #[inline]
    pub fn eval_k2(&self, x: f64) -> f64 {
        self.family.k2(x / self.h) / self.h
    }

    /// `d/dx K2_h(x) = K2'(x/h)/h²`.
    #[inline]
    pub fn eval_k2_derivative(&self, x: f64) -> f64 {
        self.family.k2_derivative(x / self.h) / (self.h * self.h)
    }

    /// Fourier transform of the *unscaled* `K2` at `t`; see [`Self::eval_fourier_scaled`].
    #[inline]
    pub fn eval_fourier(&self, t: f64) -> f64 {
        self.family.fourier(t)
    }

    /// Fourier transform of `K2_h`, which is `ψ(h t)`.
    #[inline]
    pub fn eval_fourier_scaled(&self, t: f64) -> f64 {
        self.family.fourier(self.h * t)
    }

    /// `∫ K2_h(x)² dx = (1/h) ∫ K2(x)² dx`.
    pub fn l2_norm_squared(&self) -> f64 {
        self.family.l2_norm_squared() / self.h
    }

    /// `K2_h(0)`, which equals `∫ K_h(x)² dx` for the underlying base kernel.
    pub fn at_zero(&self) -> f64 {
        self.family.k2(0.0) / self.h
    }

    /// `∫ K2_h(x) dx = ψ(0)`; independent of `h`.
    pub fn mass(&self) -> f64 {
        self.family.fourier(0.0)
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(h={})", self.family, self.h)
    }
}
