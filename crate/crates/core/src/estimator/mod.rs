//! The plug-in estimator `Q̂` and the data types it consumes.
//!
//! With `A_k(n, m) = K2_h((Y_k(n) - Y_k(m)) / σ_k)`:
//!
//! ```text
//! term1 = (1/N²) Σ_n Σ_m Π_k A_k(n, m)
//! term2 = Π_k (1/N²) Σ_n Σ_m A_k(n, m)
//! term3 = (1/N) Σ_n Π_k (1/N) Σ_m A_k(n, m)
//! Q̂     = (term1 + term2 - 2 term3) / 2
//! ```
//!
//! Diagonal pairs `n = m` are included, so `Q̂` is a V-statistic. The exactly
//! unbiased U-statistic counterpart lives in [`crate::asymptotics`].
//!
//! The pair sums use the symmetry `A_k(n, m) = A_k(m, n)` and run over square
//! tiles of 32 x 32 pairs. Each tile is summed plainly and tile totals go into
//! Neumaier accumulators. Strips of tiles may be evaluated in parallel, but
//! they are always merged in the same order, so the result does not depend on
//! the number of workers.

mod cf;
mod gradient;

use alloc::vec::Vec;

pub use cf::{estimate_q_cf, QuadratureSettings};
pub use gradient::q_gradient;

use crate::error::{Error, Result};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::sum::Neumaier;

/// `N x K` observations, stored column by column.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    columns: Vec<Vec<f64>>,
    n: usize,
}

impl Sample {
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self> {
        let k = columns.len();
        let n = columns.first().map_or(0, Vec::len);
        if n < 2 || k < 2 {
            return Err(Error::SampleShape { n, k });
        }
        for (c, col) in columns.iter().enumerate() {
            if col.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: col.len(),
                });
            }
            if let Some(r) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row: r, col: c });
            }
        }
        Ok(Sample { columns, n })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let k = rows.first().map_or(0, |r| r.as_ref().len());
        let mut columns = alloc::vec![Vec::with_capacity(rows.len()); k];
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != k {
                return Err(Error::RaggedSample {
                    row: i,
                    expected: k,
                    got: row.len(),
                });
            }
            for (col, &v) in columns.iter_mut().zip(row) {
                col.push(v);
            }
        }
        Sample::from_columns(columns)
    }

    /// Number of observations `N`.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of variables `K`.
    pub fn k(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, k: usize) -> &[f64] {
        &self.columns[k]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn value(&self, n: usize, k: usize) -> f64 {
        self.columns[k][n]
    }

    pub fn row(&self, n: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[n]).collect()
    }

    pub fn into_columns(self) -> Vec<Vec<f64>> {
        self.columns
    }
}

/// How scale factors were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScaleSource {
    UserSupplied,
    SampleStdDev,
}

/// Request passed to [`scale_factors`].
#[derive(Debug, Clone, PartialEq)]
pub enum ScaleMode {
    UserSupplied(Vec<f64>),
    SampleStdDev,
}

/// Per-variable scale factors `σ_k > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleFactors {
    sigma: Vec<f64>,
    source: ScaleSource,
}

impl ScaleFactors {
    /// Scale factors fixed independently of the data. Exact unbiasedness of the
    /// U-statistic form only holds in this mode.
    pub fn user(sigma: Vec<f64>) -> Result<Self> {
        for (i, &s) in sigma.iter().enumerate() {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::InvalidScale { index: i, value: s });
            }
        }
        Ok(ScaleFactors {
            sigma,
            source: ScaleSource::UserSupplied,
        })
    }

    /// Unit scale factors.
    pub fn unit(k: usize) -> Self {
        ScaleFactors {
            sigma: alloc::vec![1.0; k],
            source: ScaleSource::UserSupplied,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.sigma
    }

    pub fn source(&self) -> ScaleSource {
        self.source
    }

    pub(crate) fn check_len(&self, k: usize) -> Result<()> {
        if self.sigma.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: self.sigma.len(),
            });
        }
        Ok(())
    }
}

/// Resolves scale factors. `SampleStdDev` uses the population standard
/// deviation (divisor `N`) of each column and fails on constant columns.
pub fn scale_factors(sample: &Sample, mode: ScaleMode) -> Result<ScaleFactors> {
    match mode {
        ScaleMode::UserSupplied(sigma) => {
            let s = ScaleFactors::user(sigma)?;
            s.check_len(sample.k())?;
            Ok(s)
        }
        ScaleMode::SampleStdDev => {
            let sigma = sample
                .columns()
                .iter()
                .enumerate()
                .map(|(k, col)| {
                    let first = col[0];
                    if col.iter().all(|&v| v == first) {
                        return Err(Error::ZeroVariance(k));
                    }
                    let sd = population_sd(col);
                    if sd > 0.0 {
                        Ok(sd)
                    } else {
                        Err(Error::ZeroVariance(k))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ScaleFactors {
                sigma,
                source: ScaleSource::SampleStdDev,
            })
        }
    }
}

pub(crate) fn population_sd(col: &[f64]) -> f64 {
    let n = col.len() as f64;
    let mean = crate::sum::sum(col) / n;
    let ss: Neumaier = col.iter().map(|&v| (v - mean) * (v - mean)).collect();
    libm::sqrt(ss.value() / n)
}

/// `π̂_Y(y) = (1/N) Σ_n Π_k K2_h((y_k - Y_k(n)) / σ_k)`.
pub fn pi_hat_joint(sample: &Sample, kernel: &KernelSpec, sigma: &ScaleFactors, y: &[f64]) -> Result<f64> {
    sigma.check_len(sample.k())?;
    if y.len() != sample.k() {
        return Err(Error::DimensionMismatch {
            expected: sample.k(),
            got: y.len(),
        });
    }
    let mut acc = Neumaier::new();
    for n in 0..sample.n() {
        let mut prod = 1.0;
        for (k, col) in sample.columns().iter().enumerate() {
            prod *= kernel.eval_k2((y[k] - col[n]) / sigma.values()[k]);
        }
        acc.add(prod);
    }
    Ok(acc.value() / sample.n() as f64)
}

/// `π̂_{Y_k}(y) = (1/N) Σ_n K2_h((y - Y_k(n)) / σ_k)`.
pub fn pi_hat_marginal(sample: &Sample, kernel: &KernelSpec, sigma: &ScaleFactors, k: usize, y: f64) -> Result<f64> {
    sigma.check_len(sample.k())?;
    let s = sigma.values()[k];
    let acc: Neumaier = sample.column(k).iter().map(|&v| kernel.eval_k2((y - v) / s)).collect();
    Ok(acc.value() / sample.n() as f64)
}

/// Output of [`estimate_q`].
#[derive(Debug, Clone, PartialEq)]
pub struct QEstimate {
    pub q_hat: f64,
    /// `Ê π̂_Y(Y)`
    pub term1: f64,
    /// `Π_k Ê π̂_{Y_k}(Y_k)`
    pub term2: f64,
    /// `Ê Π_k π̂_{Y_k}(Y_k)`
    pub term3: f64,
    pub n: usize,
    pub kernel: KernelSpec,
    pub sigma: ScaleFactors,
}

/// Everything one `O(K N²)` sweep over the pairwise kernel values yields.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSummary {
    pub n: usize,
    pub term1: f64,
    pub term2: f64,
    pub term3: f64,
    /// `(1/N²) Σ Σ A_k(n, m)`, the plug-in for `E[π_{Y_k}(Y_k)]`.
    pub marginal_mean: Vec<f64>,
    /// `(1/N) Σ_n π̂_{Y_k}(Y_k(n))²`, the plug-in for `E[π_{Y_k}(Y_k)²]`.
    pub marginal_row_sq: Vec<f64>,
    /// `(1/N²) Σ Σ A_k(n, m)²`, the plug-in for `E[K2_h((Y_k - Y_k')/σ_k)²]`.
    pub marginal_pair_sq: Vec<f64>,
}

impl KernelSummary {
    pub fn q_hat(&self) -> f64 {
        0.5 * (self.term1 + self.term2 - 2.0 * self.term3)
    }
}

/// Pairwise kernel values `A_k(n, m)`. The difference `Y_k(n) - Y_k(m)` is
/// formed on raw values before scaling.
pub(crate) struct PairKernel<'a> {
    pub columns: &'a [Vec<f64>],
    pub scale: Vec<f64>,
    pub family: KernelFamily,
    pub inv_h: f64,
}

impl<'a> PairKernel<'a> {
    pub fn new(sample: &'a Sample, kernel: &KernelSpec, sigma: &ScaleFactors) -> Self {
        let h = kernel.bandwidth();
        PairKernel {
            columns: sample.columns(),
            scale: sigma.values().iter().map(|s| 1.0 / (s * h)).collect(),
            family: kernel.family(),
            inv_h: 1.0 / h,
        }
    }

    /// `A_k(n, m)`.
    #[inline(always)]
    pub fn value(&self, k: usize, n: usize, m: usize) -> f64 {
        let col = &self.columns[k];
        self.family.k2((col[n] - col[m]) * self.scale[k]) * self.inv_h
    }
}

const BLOCK: usize = 32;
/// Number of row blocks evaluated between two ordered merges.
const WAVE: usize = 64;

/// Output of one row block `I`: the tiles `(I, J)` for all `J >= I`.
struct Strip {
    start: usize,
    end: usize,
    joint: Neumaier,
    pair_sq: Vec<Neumaier>,
    /// Row sums for the rows of `I`, laid out `[k][row - start]`.
    own: Vec<Neumaier>,
    /// Column sums of the tiles for rows `end..n`, laid out `[k][row - end]`.
    cols: Vec<f64>,
}

// Every unordered pair is evaluated once. Diagonal tiles are evaluated in full
// and counted once; off-diagonal tiles count twice in the symmetric totals and
// feed both their rows and their columns.
fn process_strip(pk: &PairKernel<'_>, n: usize, start: usize) -> Strip {
    let k = pk.columns.len();
    let end = (start + BLOCK).min(n);
    let rows = end - start;
    let tail = n - end;
    let mut s = Strip {
        start,
        end,
        joint: Neumaier::new(),
        pair_sq: alloc::vec![Neumaier::new(); k],
        own: alloc::vec![Neumaier::new(); k * rows],
        cols: alloc::vec![0.0; k * tail],
    };
    let mut tile_marg = alloc::vec![0.0; k];
    let mut tile_sq = alloc::vec![0.0; k];
    let mut j0 = start;
    while j0 < n {
        let j1 = (j0 + BLOCK).min(n);
        let diagonal = j0 == start;
        let weight = if diagonal { 1.0 } else { 2.0 };
        let mut tile_joint = 0.0;
        tile_sq.iter_mut().for_each(|v| *v = 0.0);
        for i in start..end {
            tile_marg.iter_mut().for_each(|v| *v = 0.0);
            let mut row_joint = 0.0;
            for m in j0..j1 {
                let mut prod = 1.0;
                for kk in 0..k {
                    let a = pk.value(kk, i, m);
                    prod *= a;
                    tile_marg[kk] += a;
                    tile_sq[kk] += a * a;
                    if !diagonal {
                        s.cols[kk * tail + (m - end)] += a;
                    }
                }
                row_joint += prod;
            }
            tile_joint += row_joint;
            for kk in 0..k {
                s.own[kk * rows + (i - start)].add(tile_marg[kk]);
            }
        }
        s.joint.add(weight * tile_joint);
        for kk in 0..k {
            s.pair_sq[kk].add(weight * tile_sq[kk]);
        }
        j0 = j1;
    }
    s
}

#[cfg(feature = "parallel")]
fn run_wave(pk: &PairKernel<'_>, n: usize, starts: &[usize]) -> Vec<Strip> {
    use rayon::prelude::*;
    starts.par_iter().map(|&b| process_strip(pk, n, b)).collect()
}

#[cfg(not(feature = "parallel"))]
fn run_wave(pk: &PairKernel<'_>, n: usize, starts: &[usize]) -> Vec<Strip> {
    starts.iter().map(|&b| process_strip(pk, n, b)).collect()
}

/// One pass over all pairs, returning the three estimator terms and the
/// marginal moments used by the null approximation.
pub fn kernel_summary(sample: &Sample, kernel: &KernelSpec, sigma: &ScaleFactors) -> Result<KernelSummary> {
    sigma.check_len(sample.k())?;
    let n = sample.n();
    let k = sample.k();
    let pk = PairKernel::new(sample, kernel, sigma);

    let starts: Vec<usize> = (0..n).step_by(BLOCK).collect();
    let mut joint = Neumaier::new();
    let mut pair_sq = alloc::vec![Neumaier::new(); k];
    let mut row_sum = alloc::vec![Neumaier::new(); k * n];
    for wave in starts.chunks(WAVE) {
        for strip in run_wave(&pk, n, wave) {
            joint.merge(&strip.joint);
            for (a, b) in pair_sq.iter_mut().zip(&strip.pair_sq) {
                a.merge(b);
            }
            let rows = strip.end - strip.start;
            let tail = n - strip.end;
            for kk in 0..k {
                for r in 0..rows {
                    row_sum[kk * n + strip.start + r].merge(&strip.own[kk * rows + r]);
                }
                for r in 0..tail {
                    row_sum[kk * n + strip.end + r].add(strip.cols[kk * tail + r]);
                }
            }
        }
    }

    let nf = n as f64;
    let nn = nf * nf;
    let mut marg = alloc::vec![Neumaier::new(); k];
    let mut row_sq = alloc::vec![Neumaier::new(); k];
    let mut prod_rows = Neumaier::new();
    for i in 0..n {
        let mut prod = 1.0;
        for kk in 0..k {
            let total = row_sum[kk * n + i].value();
            marg[kk].add(total);
            let r = total / nf;
            row_sq[kk].add(r * r);
            prod *= r;
        }
        prod_rows.add(prod);
    }
    let marginal_mean: Vec<f64> = marg.iter().map(|a| a.value() / nn).collect();
    Ok(KernelSummary {
        n,
        term1: joint.value() / nn,
        term2: marginal_mean.iter().product(),
        term3: prod_rows.value() / nf,
        marginal_row_sq: row_sq.iter().map(|a| a.value() / nf).collect(),
        marginal_pair_sq: pair_sq.iter().map(|a| a.value() / nn).collect(),
        marginal_mean,
    })
}

/// The estimator `Q̂` in `O(K N²)` time and `O(K N)` extra memory.
pub fn estimate_q(sample: &Sample, kernel: &KernelSpec, sigma: &ScaleFactors) -> Result<QEstimate> {
    let s = kernel_summary(sample, kernel, sigma)?;
    Ok(QEstimate {
        q_hat: s.q_hat(),
        term1: s.term1,
        term2: s.term2,
        term3: s.term3,
        n: s.n,
        kernel: *kernel,
        sigma: sigma.clone(),
    })
}

/// Row means `π̂_{Y_k}(Y_k(n))`, returned as `[k][n]`.
pub(crate) fn marginal_row_means(pk: &PairKernel<'_>, n: usize) -> Vec<Vec<f64>> {
    let k = pk.columns.len();
    let inv_n = 1.0 / n as f64;
    (0..k)
        .map(|kk| {
            (0..n)
                .map(|i| {
                    let acc: Neumaier = (0..n).map(|m| pk.value(kk, i, m)).collect();
                    acc.value() * inv_n
                })
                .collect()
        })
        .collect()
}
