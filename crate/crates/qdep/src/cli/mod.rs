//! The `qdep` command-line front end.
//!
//! Exit status: 0 when a command completes (and, for `test`, does not reject),
//! 3 when `test` rejects independence, 1 on any error or failed check.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::Parser;
use qdep_core::{
    estimate_q, estimate_q_cf, naive_q, power_lower_bound, run_test, scale_factors, variance_expansion, BoundVariant,
    Calibration, Error as CoreError, KernelFamily, KernelSpec, QuadratureSettings, Sample, ScaleFactors, ScaleMode,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use config::{
    read_config_file, resolve, resolve_with_env, Bound, CalibrationMode, Cli, Command, ConfigError, Format, RunConfig,
    SigmaSetting, Values,
};

use crate::io;
use crate::simlab::{self, Scenario, SweepPlan, SweepResult};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_REJECTED: i32 = 3;

/// Parses `args` (including the program name), runs the command and returns
/// the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    let print_config = cli.print_config;
    let config = match resolve(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_ERROR;
        }
    };
    if print_config {
        println!("{}", serde_json::to_string_pretty(&config).expect("config serializes"));
        return EXIT_OK;
    }
    match run(&config) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}

pub fn run(config: &RunConfig) -> Result<i32> {
    match config.command {
        Command::Test => cmd_test(config),
        Command::Sweep => cmd_sweep(config),
        Command::Nulllaw => cmd_nulllaw(config),
        Command::Simulate => cmd_simulate(config),
        Command::OracleCheck => cmd_oracle_check(config),
    }
}

/// Provenance stamped on every report.
#[derive(Debug, Clone, Serialize)]
pub struct Stamp {
    pub version: &'static str,
    pub seed: u64,
    pub config_hash: String,
}

fn stamp(config: &RunConfig) -> Stamp {
    Stamp {
        version: crate::VERSION,
        seed: config.seed,
        config_hash: config.hash(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TestReport {
    #[serde(flatten)]
    pub stamp: Stamp,
    pub input: PathBuf,
    pub columns: Vec<String>,
    pub n: usize,
    pub kernel: String,
    pub h: f64,
    pub sigma: Vec<f64>,
    pub sigma_source: &'static str,
    pub q_hat: f64,
    pub term1: f64,
    pub term2: f64,
    pub term3: f64,
    pub e1: Option<f64>,
    pub v1: Option<f64>,
    pub gamma: Option<f64>,
    pub beta: Option<f64>,
    pub alpha: f64,
    pub calibration: CalibrationMode,
    pub resamples: Option<usize>,
    pub q_alpha: f64,
    pub p_value: f64,
    pub reject: bool,
    pub alt_q: Option<f64>,
    pub var_leading: Option<f64>,
    pub power_lower_bound: Option<f64>,
}

impl TestReport {
    fn csv_row(&self) -> Vec<(&'static str, String)> {
        let o = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        vec![
            ("version", self.stamp.version.to_string()),
            ("seed", self.stamp.seed.to_string()),
            ("config_hash", self.stamp.config_hash.clone()),
            ("input", self.input.display().to_string()),
            ("n", self.n.to_string()),
            ("kernel", self.kernel.clone()),
            ("h", self.h.to_string()),
            ("q_hat", self.q_hat.to_string()),
            ("term1", self.term1.to_string()),
            ("term2", self.term2.to_string()),
            ("term3", self.term3.to_string()),
            ("e1", o(self.e1)),
            ("v1", o(self.v1)),
            ("gamma", o(self.gamma)),
            ("beta", o(self.beta)),
            ("alpha", self.alpha.to_string()),
            ("calibration", format!("{:?}", self.calibration).to_lowercase()),
            ("q_alpha", self.q_alpha.to_string()),
            ("p_value", self.p_value.to_string()),
            ("reject", self.reject.to_string()),
            ("alt_q", o(self.alt_q)),
            ("var_leading", o(self.var_leading)),
            ("power_lower_bound", o(self.power_lower_bound)),
        ]
    }
}

fn emit_json<T: Serialize>(config: &RunConfig, value: &T) -> Result<()> {
    match &config.output {
        Some(p) => io::write_json(p, value)?,
        None => println!("{}", serde_json::to_string_pretty(value)?),
    }
    Ok(())
}

fn emit_with(config: &RunConfig, fill: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    match &config.output {
        Some(p) => io::write_atomic(p, fill)?,
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            fill(&mut lock)?;
        }
    }
    Ok(())
}

fn explain(e: CoreError, names: &[String]) -> anyhow::Error {
    match e {
        CoreError::ZeroVariance(k) => anyhow!("column '{}' is constant; its scale factor would be zero", names[k]),
        CoreError::DegenerateNull { .. } => anyhow!("{e}; rerun with --calibration permutation"),
        other => other.into(),
    }
}

fn cmd_test(config: &RunConfig) -> Result<i32> {
    let path = config.input.as_ref().expect("validated");
    let data = io::read_sample_csv(path)?;
    let names = &data.names;
    let sample = &data.sample;
    let mode = match &config.sigma {
        SigmaSetting::User(v) => ScaleMode::UserSupplied(v.clone()),
        _ => ScaleMode::SampleStdDev,
    };
    let sigma = scale_factors(sample, mode).map_err(|e| explain(e, names))?;
    let kernel = KernelSpec::new(config.kernel, config.h)?;
    let calibration = match config.calibration {
        CalibrationMode::Gamma => Calibration::GammaChiSquare,
        CalibrationMode::Permutation => Calibration::Permutation {
            resamples: config.resamples,
            seed: config.seed,
        },
    };
    let est = estimate_q(sample, &kernel, &sigma)?;
    let result = run_test(sample, &kernel, &sigma, config.alpha, calibration).map_err(|e| explain(e, names))?;
    let (var_leading, bound) = match config.alt_q {
        Some(q) => {
            let var = variance_expansion(sample, &kernel, &sigma)?.var_leading;
            let variant = match config.bound {
                Bound::Verbatim => BoundVariant::Verbatim,
                Bound::Chebyshev => BoundVariant::Chebyshev,
            };
            (Some(var), Some(power_lower_bound(q, result.q_alpha, var, variant)?))
        }
        None => (None, None),
    };
    let report = TestReport {
        stamp: stamp(config),
        input: path.clone(),
        columns: names.clone(),
        n: sample.n(),
        kernel: kernel.family().name().to_string(),
        h: config.h,
        sigma: sigma.values().to_vec(),
        sigma_source: match sigma.source() {
            qdep_core::estimator::ScaleSource::UserSupplied => "user",
            qdep_core::estimator::ScaleSource::SampleStdDev => "sample-sd",
        },
        q_hat: result.q_hat,
        term1: est.term1,
        term2: est.term2,
        term3: est.term3,
        e1: result.null.map(|n| n.e1),
        v1: result.null.map(|n| n.v1),
        gamma: result.null.map(|n| n.gamma),
        beta: result.null.map(|n| n.beta),
        alpha: config.alpha,
        calibration: config.calibration,
        resamples: (config.calibration == CalibrationMode::Permutation).then_some(config.resamples),
        q_alpha: result.q_alpha,
        p_value: result.p_value,
        reject: result.reject,
        alt_q: config.alt_q,
        var_leading,
        power_lower_bound: bound,
    };
    match config.format {
        Format::Json => emit_json(config, &report)?,
        Format::Csv => emit_with(config, |out| {
            let row = report.csv_row();
            let mut w = csv::Writer::from_writer(out);
            w.write_record(row.iter().map(|r| r.0))?;
            w.write_record(row.iter().map(|r| r.1.as_str()))?;
            w.flush()
        })?,
    }
    if config.output.is_some() {
        println!(
            "Q̂ = {:.6e}, q_alpha = {:.6e}, p = {:.4}: {}",
            report.q_hat,
            report.q_alpha,
            report.p_value,
            if report.reject { "independence rejected" } else { "independence not rejected" }
        );
    }
    Ok(if report.reject { EXIT_REJECTED } else { EXIT_OK })
}

#[derive(Debug, Serialize)]
struct SweepReport<'a> {
    config_hash: String,
    #[serde(flatten)]
    result: &'a SweepResult,
}

fn cmd_sweep(config: &RunConfig) -> Result<i32> {
    let plan = SweepPlan {
        scenario: config.scenario.clone().expect("validated"),
        kernel: config.kernel,
        h_grid: config.h_grid.clone(),
        n_grid: config.n_grid.clone(),
        replicates: config.replicates,
        alpha: config.alpha,
        seed: config.seed,
        variance: config.variance,
        keep_values: false,
    };
    let result = simlab::run_sweep(&plan, config.workers)?;
    match config.format {
        Format::Json => emit_json(
            config,
            &SweepReport {
                config_hash: config.hash(),
                result: &result,
            },
        )?,
        Format::Csv => emit_with(config, |out| io::format_sweep_csv(&result, out))?,
    }
    let flagged: usize = result.cells.iter().map(|c| c.degenerate).sum();
    if flagged > 0 {
        eprintln!("note: {flagged} replicate(s) had degenerate null moments and were left out of the rejection rates");
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct NullLawReport {
    #[serde(flatten)]
    stamp: Stamp,
    kernel: String,
    h: f64,
    #[serde(flatten)]
    summary: simlab::NullLawSummary,
    calibration_comparison: Option<simlab::CalibrationComparison>,
}

fn qq_path(output: &Path) -> PathBuf {
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    output.with_file_name(format!("{stem}.qq.csv"))
}

fn cmd_nulllaw(config: &RunConfig) -> Result<i32> {
    let generator = config.scenario.as_ref().expect("validated");
    let kernel = KernelSpec::new(config.kernel, config.h)?;
    let summary = simlab::estimate_null_law(
        generator,
        &kernel,
        config.n,
        config.replicates,
        config.alpha,
        config.seed,
        config.workers,
    )?;
    let comparison = match config.calibration {
        CalibrationMode::Permutation => Some(simlab::compare_calibrations(
            generator,
            &kernel,
            config.n,
            config.replicates,
            config.resamples,
            config.alpha,
            config.seed,
            config.workers,
        )?),
        CalibrationMode::Gamma => None,
    };
    eprintln!(
        "KS distance {:.4}, size {}",
        summary.ks,
        summary.size.map_or_else(|| "n/a".into(), |r| format!("{:.4} ± {:.4}", r.rate, r.se))
    );
    if let Some(out) = &config.output {
        io::write_qq_csv(&qq_path(out), &summary.qq)?;
    }
    let report = NullLawReport {
        stamp: stamp(config),
        kernel: kernel.family().name().into(),
        h: config.h,
        summary,
        calibration_comparison: comparison,
    };
    match config.format {
        Format::Json => emit_json(config, &report)?,
        Format::Csv => emit_with(config, |out| {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(["n", "replicates", "degenerate", "gamma", "beta", "ks", "alpha", "size", "se_size"])?;
            let s = &report.summary;
            w.write_record([
                s.n.to_string(),
                s.replicates.to_string(),
                s.degenerate.to_string(),
                s.gamma.to_string(),
                s.beta.to_string(),
                s.ks.to_string(),
                s.alpha.to_string(),
                s.size.map_or_else(String::new, |r| r.rate.to_string()),
                s.size.map_or_else(String::new, |r| r.se.to_string()),
            ])?;
            w.flush()
        })?,
    }
    Ok(EXIT_OK)
}

fn cmd_simulate(config: &RunConfig) -> Result<i32> {
    let scenario = Scenario::new(config.scenario.clone().expect("validated"), config.n)?;
    let sample = simlab::generate(&scenario, config.seed, 0);
    let names = io::default_names(sample.k());
    match &config.output {
        Some(p) => io::write_sample_csv(p, &names, &sample)?,
        None => io::format_sample_csv(&names, &sample, &mut std::io::stdout().lock())?,
    }
    Ok(EXIT_OK)
}

/// One generated instance of `oracle-check`.
#[derive(Debug, Clone, Serialize)]
pub struct OracleRow {
    pub instance: usize,
    pub kernel: String,
    pub h: f64,
    pub n: usize,
    pub fast: f64,
    pub naive: f64,
    pub cf: f64,
    pub diff_naive: f64,
    pub diff_cf: f64,
}

pub const ORACLE_NAIVE_TOL: f64 = 1e-12;
pub const ORACLE_CF_TOL: f64 = 1e-5;

/// Random bivariate instances with `N <= 64`, evaluated three ways.
pub fn oracle_rows(instances: usize, seed: u64) -> Result<Vec<OracleRow>> {
    let families = [KernelFamily::Gaussian, KernelFamily::SquareCauchy, KernelFamily::NegSecondDerivSquareCauchy];
    let settings = QuadratureSettings::default();
    (0..instances)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let n = rng.random_range(2..=64usize);
            let dep: f64 = rng.random_range(-1.0..1.0);
            let mut x = Vec::with_capacity(n);
            let mut y = Vec::with_capacity(n);
            for _ in 0..n {
                let a: f64 = rng.sample(rand_distr::StandardNormal);
                let b: f64 = rng.sample(rand_distr::StandardNormal);
                x.push(a);
                y.push(dep * a + b);
            }
            let family = families[i % families.len()];
            let h = rng.random_range(0.5..2.0);
            let kernel = KernelSpec::new(family, h)?;
            let sample = Sample::from_columns(vec![x, y])?;
            let sigma = ScaleFactors::unit(2);
            let fast = estimate_q(&sample, &kernel, &sigma)?.q_hat;
            let naive = naive_q(&sample, &kernel, &sigma)?;
            let cf = estimate_q_cf(&sample, &kernel, &sigma, &settings)
                .with_context(|| format!("instance {i}: Fourier-side quadrature"))?;
            Ok(OracleRow {
                instance: i,
                kernel: family.name().into(),
                h,
                n,
                fast,
                naive,
                cf,
                diff_naive: (fast - naive).abs(),
                diff_cf: (fast - cf).abs(),
            })
        })
        .collect()
}

fn cmd_oracle_check(config: &RunConfig) -> Result<i32> {
    let rows = oracle_rows(config.instances, config.seed)?;
    let max_naive = rows.iter().map(|r| r.diff_naive).fold(0.0, f64::max);
    let max_cf = rows.iter().map(|r| r.diff_cf).fold(0.0, f64::max);
    let pass = max_naive < ORACLE_NAIVE_TOL && max_cf < ORACLE_CF_TOL;
    #[derive(Serialize)]
    struct Report<'a> {
        #[serde(flatten)]
        stamp: Stamp,
        max_diff_naive: f64,
        max_diff_cf: f64,
        pass: bool,
        rows: &'a [OracleRow],
    }
    match config.format {
        Format::Json => emit_json(
            config,
            &Report {
                stamp: stamp(config),
                max_diff_naive: max_naive,
                max_diff_cf: max_cf,
                pass,
                rows: &rows,
            },
        )?,
        Format::Csv => emit_with(config, |out| {
            let mut w = csv::Writer::from_writer(out);
            for r in &rows {
                w.serialize(r)?;
            }
            w.flush()
        })?,
    }
    eprintln!(
        "{} instances: max |fast - naive| = {max_naive:.3e} (tol {ORACLE_NAIVE_TOL:e}), max |fast - cf| = {max_cf:.3e} (tol {ORACLE_CF_TOL:e})",
        rows.len()
    );
    if pass {
        Ok(EXIT_OK)
    } else {
        eprintln!("oracle check failed");
        Ok(EXIT_ERROR)
    }
}
