use std::time::Instant;

use qdep_core::{
    estimate_q, run_test, variance_expansion, Calibration, Error as CoreError, KernelFamily, KernelSpec, NullApprox,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scenario::{generate, Generator, Scenario, SimError};
use super::stats::{Moments, Rate};

pub const MIN_REPLICATES: usize = 100;

/// Grid of bandwidths and sample sizes evaluated on one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPlan {
    pub scenario: Generator,
    #[serde(with = "family_name")]
    pub kernel: KernelFamily,
    pub h_grid: Vec<f64>,
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    pub alpha: f64,
    pub seed: u64,
    /// Also average the leading-order variance `Σ̃/N` over replicates.
    #[serde(default)]
    pub variance: bool,
    /// Keep every replicate's `Q̂` in the result.
    #[serde(default)]
    pub keep_values: bool,
}

pub(crate) mod family_name {
    use qdep_core::KernelFamily;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(f: &KernelFamily, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(f.name())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<KernelFamily, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

fn strictly_increasing<T: PartialOrd>(v: &[T]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

impl SweepPlan {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Plan(m));
        self.scenario.validate()?;
        if self.replicates < MIN_REPLICATES {
            return bad(format!("replicates must be at least {MIN_REPLICATES}, got {}", self.replicates));
        }
        if self.h_grid.is_empty() || self.n_grid.is_empty() {
            return bad("h_grid and n_grid must be nonempty".into());
        }
        if !strictly_increasing(&self.h_grid) || !strictly_increasing(&self.n_grid) {
            return bad("h_grid and n_grid must be strictly increasing".into());
        }
        if let Some(h) = self.h_grid.iter().find(|h| !(h.is_finite() && **h > 0.0)) {
            return bad(format!("bandwidths must be positive, got {h}"));
        }
        if self.n_grid[0] < 4 {
            return bad(format!("sample sizes must be at least 4, got {}", self.n_grid[0]));
        }
        if self.n_grid.len() > u32::MAX as usize || self.replicates > u32::MAX as usize {
            return bad("grid or replicate count too large".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        Ok(())
    }
}

/// Stream index of replicate `r` at the `n_index`-th sample size. Every
/// bandwidth sees the same draws.
pub fn replicate_stream(n_index: usize, r: usize) -> u64 {
    ((n_index as u64) << 32) | r as u64
}

/// Aggregates for one `(h, n)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub h: f64,
    pub n: usize,
    /// `Q` of the generating law, when known.
    pub exact_q: Option<f64>,
    /// Whether the generating law is a product, i.e. the rejection rate is a size.
    pub null_holds: bool,
    pub q_hat: Moments,
    /// Rejection rate over replicates with a usable null approximation.
    pub rejection: Option<Rate>,
    /// Replicates whose plug-in null moments were degenerate.
    pub degenerate: usize,
    pub mean_e1: Option<f64>,
    pub mean_v1: Option<f64>,
    pub mean_gamma: Option<f64>,
    pub mean_beta: Option<f64>,
    pub mean_q_alpha: Option<f64>,
    pub mean_var_leading: Option<f64>,
    pub values: Option<Vec<f64>>,
}

impl Cell {
    /// `1 - power` when the law is dependent.
    pub fn type2_error(&self) -> Option<f64> {
        match (&self.rejection, self.null_holds) {
            (Some(r), false) => Some(1.0 - r.rate),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub mean_seconds: f64,
    pub max_seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub version: String,
    pub plan: SweepPlan,
    /// Ordered by `h`, then `n`.
    pub cells: Vec<Cell>,
    /// Wall time per replicate, parallel to `cells`. Kept apart so the
    /// statistics stay comparable across runs.
    pub runtime: Vec<RuntimeStats>,
}

impl SweepResult {
    pub fn cell(&self, h: f64, n: usize) -> Option<&Cell> {
        self.cells.iter().find(|c| c.h == h && c.n == n)
    }
}

struct Outcome {
    q_hat: f64,
    decision: Option<(bool, NullApprox, f64)>,
    var_leading: Option<f64>,
    seconds: f64,
}

fn evaluate(scenario: &Scenario, plan: &SweepPlan, seed: u64, stream: u64) -> Result<Vec<Outcome>, SimError> {
    let sample = generate(scenario, seed, stream);
    let sigma = scenario.true_sigma()?;
    plan.h_grid
        .iter()
        .map(|&h| {
            let start = Instant::now();
            let kernel = KernelSpec::new(plan.kernel, h)?;
            let (q_hat, decision) = match run_test(&sample, &kernel, &sigma, plan.alpha, Calibration::GammaChiSquare) {
                Ok(t) => (t.q_hat, Some((t.reject, t.null.expect("gamma calibration sets null"), t.q_alpha))),
                Err(CoreError::DegenerateNull { .. }) => (estimate_q(&sample, &kernel, &sigma)?.q_hat, None),
                Err(e) => return Err(e.into()),
            };
            let var_leading = if plan.variance {
                Some(variance_expansion(&sample, &kernel, &sigma)?.var_leading)
            } else {
                None
            };
            Ok(Outcome {
                q_hat,
                decision,
                var_leading,
                seconds: start.elapsed().as_secs_f64(),
            })
        })
        .collect()
}

fn mean_of(it: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, c) = it.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    (c > 0).then(|| s / c as f64)
}

/// Runs every cell of `plan` on `workers` threads.
///
/// Replicates are drawn from indexed streams and reduced in index order, so
/// the cells do not depend on `workers`.
pub fn run_sweep(plan: &SweepPlan, workers: usize) -> Result<SweepResult, SimError> {
    plan.validate()?;
    if workers == 0 {
        return Err(SimError::Plan("workers must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| SimError::Pool(e.to_string()))?;

    let nh = plan.h_grid.len();
    let mut by_n = Vec::with_capacity(plan.n_grid.len());
    for (ni, &n) in plan.n_grid.iter().enumerate() {
        let scenario = Scenario::new(plan.scenario.clone(), n)?;
        let outcomes: Vec<Vec<Outcome>> = pool.install(|| {
            (0..plan.replicates)
                .into_par_iter()
                .map(|r| evaluate(&scenario, plan, plan.seed, replicate_stream(ni, r)))
                .collect::<Result<_, _>>()
        })?;
        by_n.push(outcomes);
    }

    let null_holds = plan.scenario.is_product();
    let mut cells = Vec::with_capacity(nh * plan.n_grid.len());
    let mut runtime = Vec::with_capacity(cells.capacity());
    for (hi, &h) in plan.h_grid.iter().enumerate() {
        let exact_q = plan.scenario.exact_q(&KernelSpec::new(plan.kernel, h)?)?;
        for (ni, &n) in plan.n_grid.iter().enumerate() {
            let cell: Vec<&Outcome> = by_n[ni].iter().map(|o| &o[hi]).collect();
            let values: Vec<f64> = cell.iter().map(|o| o.q_hat).collect();
            let decided: Vec<&(bool, NullApprox, f64)> = cell.iter().filter_map(|o| o.decision.as_ref()).collect();
            let hits = decided.iter().filter(|d| d.0).count();
            cells.push(Cell {
                h,
                n,
                exact_q,
                null_holds,
                q_hat: Moments::of(&values),
                rejection: Rate::new(hits, decided.len()),
                degenerate: cell.len() - decided.len(),
                mean_e1: mean_of(decided.iter().map(|d| d.1.e1)),
                mean_v1: mean_of(decided.iter().map(|d| d.1.v1)),
                mean_gamma: mean_of(decided.iter().map(|d| d.1.gamma)),
                mean_beta: mean_of(decided.iter().map(|d| d.1.beta)),
                mean_q_alpha: mean_of(decided.iter().map(|d| d.2)),
                mean_var_leading: mean_of(cell.iter().filter_map(|o| o.var_leading)),
                values: plan.keep_values.then_some(values),
            });
            let secs = cell.iter().map(|o| o.seconds);
            runtime.push(RuntimeStats {
                mean_seconds: mean_of(secs.clone()).unwrap_or(0.0),
                max_seconds: secs.fold(0.0, f64::max),
            });
        }
    }
    Ok(SweepResult {
        version: crate::VERSION.to_string(),
        plan: plan.clone(),
        cells,
        runtime,
    })
}
