use qdep_core::{estimate_q, run_test, Calibration, Error as CoreError, KernelSpec, NullApprox};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scenario::{generate, Generator, Scenario, SimError};
use super::stats::{ks_distance, Rate};

/// Largest number of QQ pairs kept.
const QQ_POINTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QqPoint {
    pub theoretical: f64,
    pub empirical: f64,
}

/// Empirical law of `N Q̂` under independence against the fitted `γ χ²(β)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullLawSummary {
    pub n: usize,
    pub replicates: usize,
    pub degenerate: usize,
    /// `γ` and `β` averaged over replicates with usable plug-ins.
    pub gamma: f64,
    pub beta: f64,
    /// Kolmogorov–Smirnov distance to `γ χ²(β)` with the averaged parameters.
    pub ks: f64,
    pub alpha: f64,
    /// Rejection rate of the per-replicate test at `alpha`.
    pub size: Option<Rate>,
    pub qq: Vec<QqPoint>,
    /// Sorted `N Q̂`.
    pub statistics: Vec<f64>,
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, SimError> {
    if workers == 0 {
        return Err(SimError::Plan("workers must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| SimError::Pool(e.to_string()))
}

fn product_scenario(generator: &Generator, n: usize) -> Result<Scenario, SimError> {
    if !generator.is_product() {
        return Err(SimError::Invalid("the null law needs independent coordinates".into()));
    }
    Scenario::new(generator.clone(), n)
}

/// Simulates `N Q̂` on `replicates` independent samples of size `n`.
pub fn estimate_null_law(
    generator: &Generator,
    kernel: &KernelSpec,
    n: usize,
    replicates: usize,
    alpha: f64,
    seed: u64,
    workers: usize,
) -> Result<NullLawSummary, SimError> {
    let scenario = product_scenario(generator, n)?;
    if replicates < 2 {
        return Err(SimError::Plan("at least two replicates are needed".into()));
    }
    let sigma = scenario.true_sigma()?;
    let runs: Vec<(f64, Option<(bool, NullApprox)>)> = pool(workers)?.install(|| {
        (0..replicates)
            .into_par_iter()
            .map(|r| {
                let sample = generate(&scenario, seed, r as u64);
                match run_test(&sample, kernel, &sigma, alpha, Calibration::GammaChiSquare) {
                    Ok(t) => Ok((t.q_hat, Some((t.reject, t.null.expect("gamma calibration sets null"))))),
                    Err(CoreError::DegenerateNull { .. }) => Ok((estimate_q(&sample, kernel, &sigma)?.q_hat, None)),
                    Err(e) => Err(SimError::from(e)),
                }
            })
            .collect::<Result<_, _>>()
    })?;

    let usable: Vec<&(bool, NullApprox)> = runs.iter().filter_map(|r| r.1.as_ref()).collect();
    if usable.is_empty() {
        return Err(CoreError::DegenerateNull { e1: 0.0, v1: 0.0 }.into());
    }
    let m = usable.len() as f64;
    let e1 = usable.iter().map(|u| u.1.e1).sum::<f64>() / m;
    let v1 = usable.iter().map(|u| u.1.v1).sum::<f64>() / m;
    let fitted = NullApprox::from_moments(e1, v1)?;
    let law = fitted.law();

    let mut statistics: Vec<f64> = runs.iter().map(|r| n as f64 * r.0).collect();
    statistics.sort_by(f64::total_cmp);
    let ks = ks_distance(&statistics, |x| law.cdf(x));
    let step = statistics.len().div_ceil(QQ_POINTS);
    let qq = (0..statistics.len())
        .step_by(step)
        .map(|i| QqPoint {
            theoretical: law.quantile((i as f64 + 0.5) / statistics.len() as f64),
            empirical: statistics[i],
        })
        .collect();
    Ok(NullLawSummary {
        n,
        replicates,
        degenerate: runs.len() - usable.len(),
        gamma: fitted.gamma,
        beta: fitted.beta,
        ks,
        alpha,
        size: Rate::new(usable.iter().filter(|u| u.0).count(), usable.len()),
        qq,
        statistics,
    })
}

/// Rejection rates of the two calibrations on the same replicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationComparison {
    pub gamma: Rate,
    pub permutation: Rate,
    /// Replicates on which the two decisions differ.
    pub discordant: usize,
}

impl CalibrationComparison {
    pub fn difference(&self) -> f64 {
        self.gamma.rate - self.permutation.rate
    }

    /// Standard error of [`difference`](Self::difference) for paired decisions.
    pub fn se_difference(&self) -> f64 {
        let t = self.gamma.trials as f64;
        let d = self.difference();
        ((self.discordant as f64 / t - d * d).max(0.0) / t).sqrt()
    }
}

/// Tests every replicate with both the `γ χ²(β)` and the permutation
/// calibration. Replicates with degenerate plug-ins are skipped.
#[allow(clippy::too_many_arguments)]
pub fn compare_calibrations(
    generator: &Generator,
    kernel: &KernelSpec,
    n: usize,
    replicates: usize,
    resamples: usize,
    alpha: f64,
    seed: u64,
    workers: usize,
) -> Result<CalibrationComparison, SimError> {
    let scenario = product_scenario(generator, n)?;
    let sigma = scenario.true_sigma()?;
    let pairs: Vec<Option<(bool, bool)>> = pool(workers)?.install(|| {
        (0..replicates)
            .into_par_iter()
            .map(|r| {
                let sample = generate(&scenario, seed, r as u64);
                let gamma = match run_test(&sample, kernel, &sigma, alpha, Calibration::GammaChiSquare) {
                    Ok(t) => t.reject,
                    Err(CoreError::DegenerateNull { .. }) => return Ok(None),
                    Err(e) => return Err(SimError::from(e)),
                };
                let perm_seed = seed ^ (r as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
                let calibration = Calibration::Permutation { resamples, seed: perm_seed };
                let perm = run_test(&sample, kernel, &sigma, alpha, calibration)?.reject;
                Ok(Some((gamma, perm)))
            })
            .collect::<Result<_, SimError>>()
    })?;
    let done: Vec<(bool, bool)> = pairs.into_iter().flatten().collect();
    let t = done.len();
    let rate = |hits: usize| Rate::new(hits, t).ok_or_else(|| SimError::Plan("no usable replicates".into()));
    Ok(CalibrationComparison {
        gamma: rate(done.iter().filter(|d| d.0).count())?,
        permutation: rate(done.iter().filter(|d| d.1).count())?,
        discordant: done.iter().filter(|d| d.0 != d.1).count(),
    })
}
