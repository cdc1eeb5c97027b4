use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use qdep_core::KernelFamily;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::io::read_joint_json;
use crate::simlab::{family_name, Generator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Test a CSV sample for mutual independence.
    Test,
    /// Bandwidth and sample-size sweep on a simulated scenario.
    Sweep,
    /// Simulated null law of N·Q̂ against its γχ²(β) approximation.
    Nulllaw,
    /// Write a simulated sample as CSV.
    Simulate,
    /// Compare the fast, literal and Fourier-side estimators on small instances.
    OracleCheck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationMode {
    Gamma,
    Permutation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bound {
    Verbatim,
    Chebyshev,
}

/// Scale factors requested on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaSetting {
    /// Population standard deviation of each column.
    SampleSd,
    /// True standard deviations of a simulated scenario.
    True,
    User(Vec<f64>),
}

impl std::str::FromStr for SigmaSetting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "sd" | "sample-sd" => Ok(SigmaSetting::SampleSd),
            "true" => Ok(SigmaSetting::True),
            list => list
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| format!("'{v}' is not a number")))
                .collect::<Result<Vec<_>, _>>()
                .map(SigmaSetting::User),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "qdep", version, about = "Kernel quadratic dependence test and simulation harness")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// TOML file with default values; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Print the resolved configuration as JSON and exit.
    #[arg(long)]
    pub print_config: bool,
    #[command(flatten)]
    pub values: Values,
}

/// Settings that may come from flags or from the config file.
#[derive(Debug, Default, Clone, clap::Args, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Values {
    /// CSV sample: header row, one column per variable.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Scenario such as `bivariate-gaussian:rho=0.5`, `copy-plus-noise:noise_sd=1,k=2`,
    /// `product:marginals=normal;uniform(0,1)`, `rotated-uniform:angle=0.5`
    /// or `discrete:path=law.json`.
    #[arg(long, value_parser = scenario_arg)]
    #[serde(default, deserialize_with = "scenario_value")]
    pub scenario: Option<Value>,
    /// gaussian, cauchy2 or cauchy2dd.
    #[arg(long)]
    pub kernel: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub h: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub h_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub n_grid: Option<Vec<usize>>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// `sd`, `true` or a comma-separated list of positive values.
    #[arg(long, allow_hyphen_values = true)]
    pub sigma: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    #[arg(long, value_enum)]
    pub calibration: Option<CalibrationMode>,
    /// Permutation resamples.
    #[arg(long)]
    pub resamples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to QDEP_WORKERS, then 1.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Defaults to the output extension, then json.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Alternative value of Q for the power lower bound.
    #[arg(long, allow_negative_numbers = true)]
    pub alt_q: Option<f64>,
    #[arg(long, value_enum)]
    pub bound: Option<Bound>,
    /// Number of generated instances for oracle-check.
    #[arg(long)]
    pub instances: Option<usize>,
    /// Also report the leading-order variance in sweeps.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub variance: Option<bool>,
}

fn scenario_value<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<Value>, D::Error> {
    Ok(Some(Value::deserialize(d)?))
}

fn scenario_arg(s: &str) -> Result<Value, String> {
    Ok(Value::String(s.into()))
}

/// Fully resolved settings of one invocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub input: Option<PathBuf>,
    pub scenario: Option<Generator>,
    #[serde(with = "family_name")]
    pub kernel: KernelFamily,
    pub h: f64,
    pub h_grid: Vec<f64>,
    pub n: usize,
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    pub sigma: SigmaSetting,
    pub alpha: f64,
    pub calibration: CalibrationMode,
    pub resamples: usize,
    pub seed: u64,
    pub workers: usize,
    pub output: Option<PathBuf>,
    pub format: Format,
    pub alt_q: Option<f64>,
    pub bound: Bound,
    pub instances: usize,
    pub variance: bool,
}

impl RunConfig {
    /// SHA-256 of the JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// A rejected setting, naming the flag it came from.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid value for --{flag}: {message}")]
pub struct ConfigError {
    pub flag: &'static str,
    pub message: String,
}

fn reject<T>(flag: &'static str, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError {
        flag,
        message: message.into(),
    })
}

impl Values {
    /// `self` wins over `base` field by field.
    fn over(self, base: Values) -> Values {
        Values {
            input: self.input.or(base.input),
            scenario: self.scenario.or(base.scenario),
            kernel: self.kernel.or(base.kernel),
            h: self.h.or(base.h),
            h_grid: self.h_grid.or(base.h_grid),
            n: self.n.or(base.n),
            n_grid: self.n_grid.or(base.n_grid),
            replicates: self.replicates.or(base.replicates),
            sigma: self.sigma.or(base.sigma),
            alpha: self.alpha.or(base.alpha),
            calibration: self.calibration.or(base.calibration),
            resamples: self.resamples.or(base.resamples),
            seed: self.seed.or(base.seed),
            workers: self.workers.or(base.workers),
            output: self.output.or(base.output),
            format: self.format.or(base.format),
            alt_q: self.alt_q.or(base.alt_q),
            bound: self.bound.or(base.bound),
            instances: self.instances.or(base.instances),
            variance: self.variance.or(base.variance),
        }
    }
}

/// Reads a config file. Unknown keys are errors.
pub fn read_config_file(path: &Path) -> Result<Values, ConfigError> {
    let text = std::fs::read_to_string(path).or_else(|e| reject("config", format!("{}: {e}", path.display())))?;
    toml::from_str(&text).or_else(|e| reject("config", format!("{}: {e}", path.display())))
}

/// Turns `kind:key=value,...` into the tagged map [`Generator`] expects.
fn scenario_map(spec: &str) -> Result<Map<String, Value>, String> {
    let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
    let mut map = Map::new();
    map.insert("kind".into(), Value::String(kind.trim().into()));
    let mut depth = 0i32;
    let mut parts = Vec::new();
    let mut start = 0;
    for (i, ch) in rest.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                parts.push(&rest[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&rest[start..]);
    for part in parts.into_iter().map(str::trim).filter(|p| !p.is_empty()) {
        let (key, value) = part.split_once('=').ok_or_else(|| format!("expected key=value, got '{part}'"))?;
        let (key, value) = (key.trim(), value.trim());
        let v = if key == "marginals" {
            Value::Array(value.split(';').map(|m| Value::String(m.trim().into())).collect())
        } else if key == "path" {
            Value::String(value.into())
        } else if let Ok(u) = value.parse::<u64>() {
            Value::from(u)
        } else if let Ok(f) = value.parse::<f64>() {
            Value::from(f)
        } else {
            return Err(format!("'{value}' is not a number"));
        };
        map.insert(key.into(), v);
    }
    Ok(map)
}

fn parse_generator(value: Value) -> Result<Generator, String> {
    let mut map = match value {
        Value::String(s) => scenario_map(&s)?,
        Value::Object(m) => m,
        other => return Err(format!("expected a string or a table, got {other}")),
    };
    if let Some(path) = map.remove("path") {
        let path = path.as_str().ok_or("path must be a string")?;
        let joint = read_joint_json(Path::new(path)).map_err(|e| e.to_string())?;
        map.insert(
            "joint".into(),
            serde_json::to_value(crate::io::JointFile::from(&joint)).expect("joint serializes"),
        );
    }
    let generator: Generator = serde_json::from_value(Value::Object(map)).map_err(|e| e.to_string())?;
    generator.validate().map_err(|e| e.to_string())?;
    Ok(generator)
}

fn strictly_increasing<T: PartialOrd>(v: &[T]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

/// Resolves flags over the optional config file over the defaults, and checks
/// the result for `cli.command`.
pub fn resolve(cli: Cli) -> Result<RunConfig, ConfigError> {
    resolve_with_env(cli, std::env::var("QDEP_WORKERS").ok())
}

pub fn resolve_with_env(cli: Cli, env_workers: Option<String>) -> Result<RunConfig, ConfigError> {
    let file = match &cli.config {
        Some(p) => read_config_file(p)?,
        None => Values::default(),
    };
    let v = cli.values.over(file);
    let command = cli.command;

    let kernel: KernelFamily = match v.kernel.as_deref().unwrap_or("gaussian").parse() {
        Ok(k) => k,
        Err(e) => return reject("kernel", e.to_string()),
    };
    let h = v.h.unwrap_or(1.0);
    if !(h.is_finite() && h > 0.0) {
        return reject("h", "h must be positive");
    }
    let h_grid = v.h_grid.unwrap_or_else(|| vec![0.25, 0.5, 1.0, 2.0, 4.0]);
    if h_grid.is_empty() || h_grid.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return reject("h-grid", "every bandwidth must be positive");
    }
    if !strictly_increasing(&h_grid) {
        return reject("h-grid", "bandwidths must be strictly increasing");
    }
    let n_grid = v.n_grid.unwrap_or_else(|| vec![100, 200, 400, 800, 1600]);
    if n_grid.is_empty() || !strictly_increasing(&n_grid) {
        return reject("n-grid", "sample sizes must be nonempty and strictly increasing");
    }
    let n = v.n.unwrap_or(500);
    if n < 2 {
        return reject("n", "n must be at least 2");
    }
    let alpha = v.alpha.unwrap_or(0.05);
    if !(alpha > 0.0 && alpha < 1.0) {
        return reject("alpha", "alpha must lie strictly between 0 and 1");
    }
    let resamples = v.resamples.unwrap_or(999);
    if resamples == 0 {
        return reject("resamples", "at least one resample is needed");
    }
    let workers = match (v.workers, env_workers) {
        (Some(w), _) => w,
        (None, Some(e)) => match e.trim().parse() {
            Ok(w) => w,
            Err(_) => return reject("workers", format!("QDEP_WORKERS='{e}' is not a count")),
        },
        (None, None) => 1,
    };
    if workers == 0 {
        return reject("workers", "at least one worker is needed");
    }
    let sigma = match &v.sigma {
        Some(s) => s.parse::<SigmaSetting>().or_else(|e| reject("sigma", e))?,
        None if command == Command::Test => SigmaSetting::SampleSd,
        None => SigmaSetting::True,
    };
    if let SigmaSetting::User(vals) = &sigma {
        if vals.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return reject("sigma", "scale factors must be positive");
        }
    }
    let format = v.format.unwrap_or_else(|| match v.output.as_ref().and_then(|p| p.extension()) {
        Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
        _ => Format::Json,
    });
    let scenario = match v.scenario {
        Some(s) => Some(parse_generator(s).or_else(|e| reject("scenario", e))?),
        None => None,
    };

    match command {
        Command::Test => {
            let Some(input) = &v.input else {
                return reject("input", "the test command needs --input");
            };
            if !input.is_file() {
                return reject("input", format!("{} does not exist", input.display()));
            }
            if sigma == SigmaSetting::True {
                return reject("sigma", "'true' is only available for simulated scenarios");
            }
        }
        Command::Sweep | Command::Nulllaw | Command::Simulate => {
            let Some(g) = &scenario else {
                return reject("scenario", "this command needs --scenario");
            };
            if command == Command::Nulllaw && !g.is_product() {
                return reject("scenario", "the null law needs a scenario with independent coordinates");
            }
            if command != Command::Simulate && sigma != SigmaSetting::True {
                return reject("sigma", "simulations use the true standard deviations");
            }
        }
        Command::OracleCheck => {}
    }
    let replicates = v.replicates.unwrap_or(1000);
    if command == Command::Sweep && replicates < crate::simlab::MIN_REPLICATES {
        return reject("replicates", format!("at least {} replicates are needed", crate::simlab::MIN_REPLICATES));
    }
    if command == Command::Nulllaw && replicates < 2 {
        return reject("replicates", "at least two replicates are needed");
    }

    Ok(RunConfig {
        command,
        input: v.input,
        scenario,
        kernel,
        h,
        h_grid,
        n,
        n_grid,
        replicates,
        sigma,
        alpha,
        calibration: v.calibration.unwrap_or(CalibrationMode::Gamma),
        resamples,
        seed: v.seed.unwrap_or(0),
        workers,
        output: v.output,
        format,
        alt_q: v.alt_q,
        bound: v.bound.unwrap_or(Bound::Verbatim),
        instances: v.instances.unwrap_or(50),
        variance: v.variance.unwrap_or(false),
    })
}
