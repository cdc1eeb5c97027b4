//! Limit law of `N Q̂` under independence and its `γ χ²(β)` approximation.
//!
//! With `c = K2_h(0)` and, per variable, `p = E[A]`, `s = E[π(Y)²]`,
//! `r = E[A²]` (all plug-ins from one kernel pass):
//!
//! ```text
//! E1 = ½ [c^K - Π p_k - Σ_k (c - p_k) Π_{l≠k} p_l]
//! V1 = ½ Σ_{states} Π_k w_k(state_k)
//! ```
//!
//! `V1` sums over per-variable states `B`, `L`, `R`, `N` weighted by
//! `r - 2s + p²`, `s - p²`, `s - p²` and `p²`, keeping only assignments with
//! at least two variables in `{B, L}` and at least two in `{B, R}`. A nine-state
//! recursion over `(min(#BL, 2), min(#BR, 2))` evaluates it in `O(K)`.

use libm::pow;

use crate::error::{Error, Result};
use crate::estimator::{kernel_summary, KernelSummary, Sample, ScaleFactors};
use crate::kernels::KernelSpec;
use crate::special::ScaledChiSquare;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullApprox {
    pub e1: f64,
    pub v1: f64,
    pub gamma: f64,
    pub beta: f64,
}

impl NullApprox {
    /// Matches the first two moments of `γ χ²(β)` to `(E1, V1)`.
    pub fn from_moments(e1: f64, v1: f64) -> Result<Self> {
        if !(e1 > 0.0 && v1 > 0.0) {
            return Err(Error::DegenerateNull { e1, v1 });
        }
        Ok(NullApprox {
            e1,
            v1,
            gamma: v1 / (2.0 * e1),
            beta: 2.0 * e1 * e1 / v1,
        })
    }

    pub fn law(&self) -> ScaledChiSquare {
        ScaledChiSquare {
            gamma: self.gamma,
            beta: self.beta,
        }
    }

    /// `1 - F(N q_hat)`.
    pub fn p_value(&self, q_hat: f64, n: usize) -> f64 {
        self.law().sf(n as f64 * q_hat).clamp(0.0, 1.0)
    }

    /// Smallest `q` with `1 - F(N q) <= alpha`.
    pub fn critical_value(&self, alpha: f64, n: usize) -> f64 {
        self.law().quantile(1.0 - alpha) / n as f64
    }
}

/// `(E1, V1)` from marginal moments.
pub fn null_limit_moments(c: f64, p: &[f64], s: &[f64], r: &[f64]) -> (f64, f64) {
    let k = p.len();
    let prod_p: f64 = p.iter().product();
    let linear: f64 = (0..k)
        .map(|j| (c - p[j]) * (0..k).filter(|&l| l != j).map(|l| p[l]).product::<f64>())
        .sum();
    let e1 = 0.5 * (pow(c, k as f64) - prod_p - linear);

    let mut dp = [[0.0f64; 3]; 3];
    dp[0][0] = 1.0;
    for j in 0..k {
        let pp = p[j] * p[j];
        let wb = r[j] - 2.0 * s[j] + pp;
        let wl = s[j] - pp;
        let mut next = [[0.0f64; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                let v = dp[a][b];
                if v == 0.0 {
                    continue;
                }
                let (a1, b1) = ((a + 1).min(2), (b + 1).min(2));
                next[a1][b1] += v * wb;
                next[a1][b] += v * wl;
                next[a][b1] += v * wl;
                next[a][b] += v * pp;
            }
        }
        dp = next;
    }
    (e1, 0.5 * dp[2][2])
}

pub(crate) fn null_from_summary(summary: &KernelSummary, kernel: &KernelSpec) -> Result<NullApprox> {
    let (e1, v1) = null_limit_moments(
        kernel.at_zero(),
        &summary.marginal_mean,
        &summary.marginal_row_sq,
        &summary.marginal_pair_sq,
    );
    NullApprox::from_moments(e1, v1)
}

/// Plug-in `E1`, `V1` and the matching `γ`, `β`.
pub fn null_moments(sample: &Sample, kernel: &KernelSpec, sigma: &ScaleFactors) -> Result<NullApprox> {
    let summary = kernel_summary(sample, kernel, sigma)?;
    null_from_summary(&summary, kernel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelFamily;
    use alloc::vec::Vec;

    /// Brute-force `4^K` enumeration of the state sum.
    fn v1_enumerated(p: &[f64], s: &[f64], r: &[f64]) -> f64 {
        let k = p.len();
        let mut total = 0.0;
        for code in 0..4usize.pow(k as u32) {
            let mut c = code;
            let mut w = 1.0;
            let (mut bl, mut br) = (0, 0);
            for j in 0..k {
                let st = c % 4;
                c /= 4;
                let pp = p[j] * p[j];
                w *= match st {
                    0 => {
                        bl += 1;
                        br += 1;
                        r[j] - 2.0 * s[j] + pp
                    }
                    1 => {
                        bl += 1;
                        s[j] - pp
                    }
                    2 => {
                        br += 1;
                        s[j] - pp
                    }
                    _ => pp,
                };
            }
            if bl >= 2 && br >= 2 {
                total += w;
            }
        }
        0.5 * total
    }

    #[test]
    fn recursion_matches_enumeration() {
        let p = [0.5, 0.61, 0.47, 0.55, 0.7];
        let s = [0.3, 0.4, 0.25, 0.33, 0.52];
        let r = [0.8, 0.9, 0.7, 0.75, 0.95];
        for k in 2..=5 {
            let (_, v) = null_limit_moments(1.0, &p[..k], &s[..k], &r[..k]);
            let e = v1_enumerated(&p[..k], &s[..k], &r[..k]);
            assert!((v - e).abs() < 1e-14 * e.abs().max(1.0), "k={k}");
        }
    }

    #[test]
    fn two_variables_by_hand() {
        let (c, p, s, r) = (1.0, [0.6, 0.5], [0.4, 0.3], [0.7, 0.6]);
        let (e1, v1) = null_limit_moments(c, &p, &s, &r);
        let e_hand = 0.5 * (1.0 - 0.3 - (0.4 * 0.5 + 0.5 * 0.6));
        assert!((e1 - e_hand).abs() < 1e-15);
        let v_hand = 0.5 * (0.7 - 0.8 + 0.36) * (0.6 - 0.6 + 0.25);
        assert!((v1 - v_hand).abs() < 1e-15);
    }

    #[test]
    fn point_mass_marginals_are_degenerate() {
        let s = Sample::from_rows(&[[1.0, 2.0]; 4]).unwrap();
        let kern = KernelSpec::new(KernelFamily::Gaussian, 1.0).unwrap();
        let err = null_moments(&s, &kern, &ScaleFactors::unit(2)).unwrap_err();
        assert!(matches!(err, Error::DegenerateNull { .. }));
    }

    #[test]
    fn moment_identities() {
        let rows: Vec<[f64; 2]> = (0..40)
            .map(|i| {
                let x = (i as f64 * 0.37).sin();
                [x, (i as f64 * 1.91).cos()]
            })
            .collect();
        let s = Sample::from_rows(&rows).unwrap();
        let kern = KernelSpec::new(KernelFamily::Gaussian, 1.0).unwrap();
        let na = null_moments(&s, &kern, &ScaleFactors::unit(2)).unwrap();
        assert!((na.gamma * na.beta - na.e1).abs() < 1e-12 * na.e1);
        assert!((2.0 * na.gamma * na.gamma * na.beta - na.v1).abs() < 1e-12 * na.v1);
    }
}
