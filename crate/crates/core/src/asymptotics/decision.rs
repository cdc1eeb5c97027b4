//! The independence test, its calibrations and the power formulas.

use alloc::vec::Vec;

use libm::{ceil, sqrt};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::null::{null_from_summary, NullApprox};
use crate::error::{Error, Result};
use crate::estimator::{kernel_summary, marginal_row_means, PairKernel, Sample, ScaleFactors};
use crate::kernels::KernelSpec;
use crate::special::normal_cdf;
use crate::sum::Neumaier;

/// How the critical value is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Calibration {
    /// Moment-matched `γ χ²(β)` law of `N Q̂`.
    GammaChiSquare,
    /// `resamples` datasets in which every column but the first is
    /// independently row-permuted.
    Permutation { resamples: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    pub q_hat: f64,
    pub alpha: f64,
    pub q_alpha: f64,
    pub reject: bool,
    pub p_value: f64,
    pub power_lower_bound: Option<f64>,
    /// Present whenever the plug-in null moments are usable.
    pub null: Option<NullApprox>,
    pub calibration: Calibration,
    pub n: usize,
}

/// Test of mutual independence at level `alpha`.
pub fn run_test(
    sample: &Sample,
    kernel: &KernelSpec,
    sigma: &ScaleFactors,
    alpha: f64,
    calibration: Calibration,
) -> Result<TestResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    let summary = kernel_summary(sample, kernel, sigma)?;
    let q_hat = summary.q_hat();
    let n = sample.n();
    let null = null_from_summary(&summary, kernel);
    let (q_alpha, p_value, null) = match calibration {
        Calibration::GammaChiSquare => {
            let null = null?;
            (null.critical_value(alpha, n), null.p_value(q_hat, n), Some(null))
        }
        Calibration::Permutation { resamples, seed } => {
            if resamples == 0 {
                return Err(Error::InvalidArgument("permutation calibration needs at least one resample".into()));
            }
            let mut perm = permutation_statistics(sample, kernel, sigma, resamples, seed)?;
            let exceed = perm.iter().filter(|&&q| q >= q_hat).count();
            let p = (1 + exceed) as f64 / (resamples + 1) as f64;
            perm.sort_by(f64::total_cmp);
            (permutation_critical_value(&perm, alpha), p, null.ok())
        }
    };
    Ok(TestResult {
        q_hat,
        alpha,
        q_alpha,
        reject: q_hat > q_alpha,
        p_value,
        power_lower_bound: None,
        null,
        calibration,
        n,
    })
}

/// Order statistic `ceil((1 - alpha)(B + 1))` of the sorted permutation
/// values, clamped to the largest one.
pub fn permutation_critical_value(sorted: &[f64], alpha: f64) -> f64 {
    let b = sorted.len();
    let rank = ceil((1.0 - alpha) * (b + 1) as f64) as usize;
    sorted[rank.clamp(1, b) - 1]
}

/// Largest `K N²` for which the kernel matrices are cached across resamples.
const CACHE_LIMIT: usize = 1 << 25;

/// `Q̂` on `resamples` column-permuted copies of the sample. One ChaCha8
/// stream seeded by `seed` drives all shuffles, in column order.
pub fn permutation_statistics(
    sample: &Sample,
    kernel: &KernelSpec,
    sigma: &ScaleFactors,
    resamples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    sigma.check_len(sample.k())?;
    let n = sample.n();
    let k = sample.k();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perms: Vec<Vec<usize>> = (0..k).map(|_| (0..n).collect()).collect();
    let mut out = Vec::with_capacity(resamples);

    if k * n * n <= CACHE_LIMIT {
        let pk = PairKernel::new(sample, kernel, sigma);
        let rows = marginal_row_means(&pk, n);
        let mats: Vec<Vec<f64>> = (0..k)
            .map(|kk| {
                let mut m = alloc::vec![0.0; n * n];
                for i in 0..n {
                    for j in i..n {
                        let v = pk.value(kk, i, j);
                        m[i * n + j] = v;
                        m[j * n + i] = v;
                    }
                }
                m
            })
            .collect();
        // term2 only involves marginal sums, which permutations leave alone.
        let term2: f64 = mats
            .iter()
            .map(|m| crate::sum::sum(m) / (n * n) as f64)
            .product();
        let nn = (n * n) as f64;
        let mut buf = alloc::vec![0.0; n];
        for _ in 0..resamples {
            for p in perms.iter_mut().skip(1) {
                p.shuffle(&mut rng);
            }
            let mut t1 = Neumaier::new();
            let mut t3 = Neumaier::new();
            for i in 0..n {
                buf.copy_from_slice(&mats[0][i * n..(i + 1) * n]);
                let mut r3 = rows[0][i];
                for kk in 1..k {
                    let pi = perms[kk][i];
                    let row = &mats[kk][pi * n..(pi + 1) * n];
                    for (b, &pj) in buf.iter_mut().zip(&perms[kk]) {
                        *b *= row[pj];
                    }
                    r3 *= rows[kk][pi];
                }
                t1.add(buf.iter().sum());
                t3.add(r3);
            }
            out.push(0.5 * (t1.value() / nn + term2 - 2.0 * t3.value() / n as f64));
        }
    } else {
        let mut cols = sample.columns().to_vec();
        for _ in 0..resamples {
            for (kk, p) in perms.iter_mut().enumerate().skip(1) {
                p.shuffle(&mut rng);
                let src = sample.column(kk);
                for (dst, &pi) in cols[kk].iter_mut().zip(p.iter()) {
                    *dst = src[pi];
                }
            }
            let permuted = Sample::from_columns(cols.clone())?;
            out.push(kernel_summary(&permuted, kernel, sigma)?.q_hat());
        }
    }
    Ok(out)
}

/// Which lower bound on the power to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundVariant {
    /// `1 - var/(q_alpha - q)`, clamped to `[0, 1]`.
    #[default]
    Verbatim,
    /// Chebyshev: `1 - var/(q - q_alpha)²` when `q > q_alpha`, otherwise 0.
    Chebyshev,
}

/// Lower bound on `P(Q̂ > q_alpha)` when `Q = q` and `var(Q̂) = var_qhat`.
///
/// The verbatim form divides by the unsquared gap. Whenever `q > q_alpha` the
/// gap is negative and the value clamps to 1, so it is not a bound in that
/// regime; [`BoundVariant::Chebyshev`] is the dimensionally consistent form.
pub fn power_lower_bound(q: f64, q_alpha: f64, var_qhat: f64, variant: BoundVariant) -> Result<f64> {
    let gap = q_alpha - q;
    if gap == 0.0 {
        return Err(Error::GapZero);
    }
    let v = match variant {
        BoundVariant::Verbatim => 1.0 - var_qhat / gap,
        BoundVariant::Chebyshev => {
            if q > q_alpha {
                1.0 - var_qhat / (gap * gap)
            } else {
                0.0
            }
        }
    };
    Ok(v.clamp(0.0, 1.0))
}

/// Normal approximation to the power: `1 - Φ((q_alpha - q) √n / √Σ̃)`.
pub fn asymptotic_power(q: f64, sigma_tilde: f64, n: usize, q_alpha: f64) -> f64 {
    1.0 - normal_cdf((q_alpha - q) * sqrt(n as f64) / sqrt(sigma_tilde))
}
