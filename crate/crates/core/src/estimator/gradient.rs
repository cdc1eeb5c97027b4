//! Analytic `∂Q̂/∂Y_j(p)` with the scale factors held fixed.
//!
//! Writing `A'_j(n, m) = K2_h'((Y_j(n) - Y_j(m))/σ_j)`, which is antisymmetric
//! in `(n, m)`, `P_{-j}` for the product of the other variables' kernel values,
//! `S_k` for the marginal means and `R_k(n)` for the row means:
//!
//! ```text
//! ∂term1 = 2/(N² σ_j) Σ_m P_{-j}(p, m) A'_j(p, m)
//! ∂term2 = Π_{k≠j} S_k · 2/(N² σ_j) Σ_m A'_j(p, m)
//! ∂term3 = 1/(N² σ_j) Σ_m A'_j(p, m) (R_{-j}(p) + R_{-j}(m))
//! ```

use alloc::vec::Vec;

use super::{kernel_summary, marginal_row_means, PairKernel, Sample, ScaleFactors, ScaleSource};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::sum::Neumaier;

/// Gradient of `Q̂` with respect to every observation, indexed `[n][k]`.
///
/// Only defined for user-supplied scale factors; a data-dependent `σ` would
/// add terms this function does not carry.
pub fn q_gradient(sample: &Sample, kernel: &KernelSpec, sigma: &ScaleFactors) -> Result<Vec<Vec<f64>>> {
    sigma.check_len(sample.k())?;
    if sigma.source() != ScaleSource::UserSupplied {
        return Err(Error::InvalidArgument(
            "the gradient treats scale factors as constants and needs user-supplied values".into(),
        ));
    }
    let n = sample.n();
    let k = sample.k();
    let pk = PairKernel::new(sample, kernel, sigma);
    let summary = kernel_summary(sample, kernel, sigma)?;
    let rows = marginal_row_means(&pk, n);
    let h = kernel.bandwidth();
    let inv_h2 = 1.0 / (h * h);
    let family = kernel.family();
    let nn = (n * n) as f64;

    // Row-mean products with one variable left out, [j][n].
    let r_minus: Vec<Vec<f64>> = (0..k)
        .map(|j| {
            (0..n)
                .map(|i| (0..k).filter(|&l| l != j).map(|l| rows[l][i]).product())
                .collect()
        })
        .collect();
    let s_minus: Vec<f64> = (0..k)
        .map(|j| (0..k).filter(|&l| l != j).map(|l| summary.marginal_mean[l]).product())
        .collect();

    let row_gradient = |p: usize| -> Vec<f64> {
        let mut a = alloc::vec![0.0; k];
        let mut d1 = alloc::vec![Neumaier::new(); k];
        let mut d2 = alloc::vec![Neumaier::new(); k];
        let mut d3 = alloc::vec![Neumaier::new(); k];
        for m in 0..n {
            for (kk, slot) in a.iter_mut().enumerate() {
                *slot = pk.value(kk, p, m);
            }
            for j in 0..k {
                let col = &pk.columns[j];
                let da = family.k2_derivative((col[p] - col[m]) * pk.scale[j]) * inv_h2;
                let others: f64 = (0..k).filter(|&l| l != j).map(|l| a[l]).product();
                d1[j].add(others * da);
                d2[j].add(da);
                d3[j].add(da * (r_minus[j][p] + r_minus[j][m]));
            }
        }
        (0..k)
            .map(|j| {
                let c = 1.0 / (nn * sigma.values()[j]);
                let t1 = 2.0 * c * d1[j].value();
                let t2 = s_minus[j] * 2.0 * c * d2[j].value();
                let t3 = c * d3[j].value();
                0.5 * (t1 + t2 - 2.0 * t3)
            })
            .collect()
    };

    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        Ok((0..n).into_par_iter().map(row_gradient).collect())
    }
    #[cfg(not(feature = "parallel"))]
    {
        Ok((0..n).map(row_gradient).collect())
    }
}
