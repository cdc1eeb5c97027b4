//! Plug-in variance of `Q̂` under dependence.
//!
//! The first-order projection of `Q̂ - Q` is `(1/N) Σ_n [f1 + f2 - f3](Y(n))`
//! up to centering, with
//!
//! ```text
//! f1(y) = π_Y(y)
//! f2(y) = Σ_l Π_{k≠l} E[π_k] · π_l(y_l)
//! f3(y) = Π_k π_k(y_k) + Σ_l π̃_l(y_l)
//! π̃_l(y) = E[Π_{k≠l} π_k(Y_k) · K2_h((Y_l - y)/σ_l)]
//! ```
//!
//! The blocks are `Σ11 = var f1`, `Σ22 = var(f2/K)`, `Σ33 = var(f3/(K+1))` and
//! the matching covariances, so that
//!
//! ```text
//! Σ̃ = Σ11 + K² Σ22 + (K+1)² Σ33 + 2K Σ12 - 2(K+1) Σ13 - 2K(K+1) Σ23
//! ```
//!
//! equals `var(f1 + f2 - f3)` and `var(Q̂) ≈ Σ̃/N`. Every population moment is
//! replaced by its empirical counterpart (diagonals included).

use alloc::vec::Vec;

use crate::error::Result;
use crate::estimator::{kernel_summary, marginal_row_means, PairKernel, Sample, ScaleFactors};
use crate::kernels::KernelSpec;
use crate::sum::Neumaier;

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceExpansion {
    pub sigma11: f64,
    pub sigma12: f64,
    pub sigma13: f64,
    pub sigma22: f64,
    pub sigma23: f64,
    pub sigma33: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: f64,
    /// `Σ̃ / N`.
    pub var_leading: f64,
    pub sigma_tilde: f64,
}

impl VarianceExpansion {
    /// Combines the blocks for `K` variables and sample size `n`.
    pub fn from_blocks(k: usize, n: usize, s: [f64; 6], theta: [f64; 3]) -> Self {
        let [s11, s12, s13, s22, s23, s33] = s;
        let kf = k as f64;
        let sigma_tilde = s11 + kf * kf * s22 + (kf + 1.0) * (kf + 1.0) * s33 + 2.0 * kf * s12
            - 2.0 * (kf + 1.0) * s13
            - 2.0 * kf * (kf + 1.0) * s23;
        VarianceExpansion {
            sigma11: s11,
            sigma12: s12,
            sigma13: s13,
            sigma22: s22,
            sigma23: s23,
            sigma33: s33,
            theta1: theta[0],
            theta2: theta[1],
            theta3: theta[2],
            var_leading: sigma_tilde / n as f64,
            sigma_tilde,
        }
    }
}

/// Empirical covariance with divisor `N`.
fn cov(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = crate::sum::sum(a) / n;
    let mb = crate::sum::sum(b) / n;
    let acc: Neumaier = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).collect();
    acc.value() / n
}

/// Two `O(K N²)` passes: one for the row means, one for `π̃`.
pub fn variance_expansion(sample: &Sample, kernel: &KernelSpec, sigma: &ScaleFactors) -> Result<VarianceExpansion> {
    sigma.check_len(sample.k())?;
    let n = sample.n();
    let k = sample.k();
    let summary = kernel_summary(sample, kernel, sigma)?;
    let pk = PairKernel::new(sample, kernel, sigma);
    let rows = marginal_row_means(&pk, n);
    let inv_n = 1.0 / n as f64;

    let leave_one: Vec<Vec<f64>> = (0..k)
        .map(|l| {
            (0..n)
                .map(|i| (0..k).filter(|&j| j != l).map(|j| rows[j][i]).product())
                .collect()
        })
        .collect();

    let mut f1 = alloc::vec![0.0; n];
    let mut tilde_sum = alloc::vec![0.0; n];
    for i in 0..n {
        let mut joint = Neumaier::new();
        let mut tilde = alloc::vec![Neumaier::new(); k];
        for m in 0..n {
            let mut prod = 1.0;
            for (l, t) in tilde.iter_mut().enumerate() {
                let a = pk.value(l, i, m);
                prod *= a;
                t.add(leave_one[l][m] * a);
            }
            joint.add(prod);
        }
        f1[i] = joint.value() * inv_n;
        tilde_sum[i] = tilde.iter().map(|t| t.value() * inv_n).sum();
    }

    let p = &summary.marginal_mean;
    let kf = k as f64;
    let g2: Vec<f64> = (0..n)
        .map(|i| {
            let x: f64 = (0..k)
                .map(|l| (0..k).filter(|&j| j != l).map(|j| p[j]).product::<f64>() * rows[l][i])
                .sum();
            x / kf
        })
        .collect();
    let g3: Vec<f64> = (0..n)
        .map(|i| {
            let prod: f64 = (0..k).map(|l| rows[l][i]).product();
            (prod + tilde_sum[i]) / (kf + 1.0)
        })
        .collect();

    Ok(VarianceExpansion::from_blocks(
        k,
        n,
        [
            cov(&f1, &f1),
            cov(&f1, &g2),
            cov(&f1, &g3),
            cov(&g2, &g2),
            cov(&g2, &g3),
            cov(&g3, &g3),
        ],
        [summary.term1, summary.term2, summary.term3],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelFamily;

    /// Literal nested sums for `K = 2`, no reuse between quantities.
    fn naive_blocks(s: &Sample, kern: &KernelSpec, sig: &ScaleFactors) -> [f64; 6] {
        let n = s.n();
        let nf = n as f64;
        let a = |k: usize, i: usize, j: usize| kern.eval_k2((s.value(i, k) - s.value(j, k)) / sig.values()[k]);
        let pi = |k: usize, i: usize| (0..n).map(|m| a(k, i, m)).sum::<f64>() / nf;
        let pj = |i: usize| (0..n).map(|m| a(0, i, m) * a(1, i, m)).sum::<f64>() / nf;
        let mean = |k: usize| (0..n).map(|i| pi(k, i)).sum::<f64>() / nf;
        let tilde = |l: usize, i: usize| {
            let o = 1 - l;
            (0..n).map(|m| pi(o, m) * a(l, m, i)).sum::<f64>() / nf
        };
        let f1: Vec<f64> = (0..n).map(pj).collect();
        let f2: Vec<f64> = (0..n).map(|i| (mean(1) * pi(0, i) + mean(0) * pi(1, i)) / 2.0).collect();
        let f3: Vec<f64> = (0..n)
            .map(|i| (pi(0, i) * pi(1, i) + tilde(0, i) + tilde(1, i)) / 3.0)
            .collect();
        let c = |x: &[f64], y: &[f64]| {
            let mx = x.iter().sum::<f64>() / nf;
            let my = y.iter().sum::<f64>() / nf;
            x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / nf
        };
        [c(&f1, &f1), c(&f1, &f2), c(&f1, &f3), c(&f2, &f2), c(&f2, &f3), c(&f3, &f3)]
    }

    #[test]
    fn blocks_match_naive_sums() {
        let s = Sample::from_rows(&[[0.0, 0.2], [0.4, 0.9], [-1.0, -0.6], [1.3, 1.0], [0.1, -0.5], [-0.4, 0.3]]).unwrap();
        for f in KernelFamily::ALL {
            let kern = KernelSpec::new(f, 0.9).unwrap();
            let sig = ScaleFactors::user(alloc::vec![1.1, 0.7]).unwrap();
            let v = variance_expansion(&s, &kern, &sig).unwrap();
            let naive = naive_blocks(&s, &kern, &sig);
            let got = [v.sigma11, v.sigma12, v.sigma13, v.sigma22, v.sigma23, v.sigma33];
            for (g, e) in got.iter().zip(&naive) {
                assert!((g - e).abs() < 1e-13, "{f}: {g} vs {e}");
            }
            assert!((v.var_leading - v.sigma_tilde / 6.0).abs() < 1e-18);
        }
    }

    #[test]
    fn point_mass_has_no_variance() {
        let s = Sample::from_rows(&[[0.5, -0.5, 2.0]; 7]).unwrap();
        let kern = KernelSpec::new(KernelFamily::SquareCauchy, 1.0).unwrap();
        let v = variance_expansion(&s, &kern, &ScaleFactors::unit(3)).unwrap();
        for x in [v.sigma11, v.sigma12, v.sigma13, v.sigma22, v.sigma23, v.sigma33, v.sigma_tilde] {
            assert!(x.abs() < 1e-10);
        }
    }
}
