use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use qdep_core::{exact_q_discrete, exact_q_gaussian, DiscreteJoint, KernelSpec, Sample, ScaleFactors};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::io::JointFile;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("could not start worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Core(#[from] qdep_core::Error),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, SimError> {
    Err(SimError::Invalid(msg.into()))
}

/// One-dimensional law used by [`Generator::ProductOfMarginals`].
///
/// Parses from `normal`, `normal(mean,sd)`, `uniform(low,high)` and
/// `exponential(rate)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Marginal {
    Normal { mean: f64, sd: f64 },
    Uniform { low: f64, high: f64 },
    Exponential { rate: f64 },
}

impl Marginal {
    fn validate(&self) -> Result<(), SimError> {
        match *self {
            Marginal::Normal { mean, sd } if mean.is_finite() && sd.is_finite() && sd > 0.0 => Ok(()),
            Marginal::Uniform { low, high } if low.is_finite() && high.is_finite() && low < high => Ok(()),
            Marginal::Exponential { rate } if rate.is_finite() && rate > 0.0 => Ok(()),
            _ => invalid(format!("bad marginal parameters in {self}")),
        }
    }

    pub fn sd(&self) -> f64 {
        match *self {
            Marginal::Normal { sd, .. } => sd,
            Marginal::Uniform { low, high } => (high - low) / 12f64.sqrt(),
            Marginal::Exponential { rate } => 1.0 / rate,
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            Marginal::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
            Marginal::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            Marginal::Exponential { rate } => Exp::new(rate).expect("validated rate").sample(rng),
        }
    }
}

impl fmt::Display for Marginal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Marginal::Normal { mean, sd } => write!(f, "normal({mean},{sd})"),
            Marginal::Uniform { low, high } => write!(f, "uniform({low},{high})"),
            Marginal::Exponential { rate } => write!(f, "exponential({rate})"),
        }
    }
}

impl FromStr for Marginal {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        let s = s.trim();
        let (name, args) = match s.find('(') {
            Some(i) if s.ends_with(')') => (&s[..i], &s[i + 1..s.len() - 1]),
            Some(_) => return invalid(format!("unbalanced parentheses in marginal '{s}'")),
            None => (s, ""),
        };
        let args: Vec<f64> = if args.trim().is_empty() {
            Vec::new()
        } else {
            args.split(',')
                .map(|a| a.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| SimError::Invalid(format!("non-numeric argument in marginal '{s}'")))?
        };
        let m = match (name.trim(), args.as_slice()) {
            ("normal", []) => Marginal::Normal { mean: 0.0, sd: 1.0 },
            ("normal", &[mean, sd]) => Marginal::Normal { mean, sd },
            ("uniform", []) => Marginal::Uniform { low: 0.0, high: 1.0 },
            ("uniform", &[low, high]) => Marginal::Uniform { low, high },
            ("exponential", []) => Marginal::Exponential { rate: 1.0 },
            ("exponential", &[rate]) => Marginal::Exponential { rate },
            _ => return invalid(format!("unknown marginal '{s}'")),
        };
        m.validate()?;
        Ok(m)
    }
}

impl TryFrom<String> for Marginal {
    type Error = SimError;

    fn try_from(s: String) -> Result<Self, SimError> {
        s.parse()
    }
}

impl From<Marginal> for String {
    fn from(m: Marginal) -> String {
        m.to_string()
    }
}

/// Data-generating law of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Generator {
    /// Rows drawn from the atoms of a finite joint law.
    #[serde(rename = "discrete")]
    DiscreteJointSampler {
        #[serde(with = "joint_as_file")]
        joint: DiscreteJoint,
    },
    /// Standard bivariate normal with correlation `rho`.
    #[serde(rename = "bivariate-gaussian")]
    BivariateGaussian { rho: f64 },
    /// `Y_1 ~ N(0, 1)` and `Y_k = Y_1 + noise_sd Z_k` for `k >= 2`.
    CopyPlusNoise {
        noise_sd: f64,
        #[serde(default = "two")]
        k: usize,
    },
    /// Independent coordinates with the given laws.
    #[serde(rename = "product")]
    ProductOfMarginals { marginals: Vec<Marginal> },
    /// Two independent uniforms with unit variance, rotated by `angle`.
    /// Uncorrelated but dependent unless `angle` is a multiple of `π/2`.
    RotatedUniform { angle: f64 },
}

fn two() -> usize {
    2
}

mod joint_as_file {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(joint: &DiscreteJoint, s: S) -> Result<S::Ok, S::Error> {
        JointFile::from(joint).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DiscreteJoint, D::Error> {
        JointFile::deserialize(d)?.into_joint().map_err(serde::de::Error::custom)
    }
}

impl Generator {
    /// Number of variables produced.
    pub fn k(&self) -> usize {
        match self {
            Generator::DiscreteJointSampler { joint } => joint.k(),
            Generator::BivariateGaussian { .. } | Generator::RotatedUniform { .. } => 2,
            Generator::CopyPlusNoise { k, .. } => *k,
            Generator::ProductOfMarginals { marginals } => marginals.len(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        match self {
            Generator::DiscreteJointSampler { joint } => {
                if let Some(k) = (0..joint.k()).find(|&k| joint.moments(k).1 <= 0.0) {
                    return invalid(format!("variable {} of the discrete law is constant", k + 1));
                }
            }
            Generator::BivariateGaussian { rho } => {
                if !(rho.abs() < 1.0) {
                    return invalid(format!("rho must satisfy |rho| < 1, got {rho}"));
                }
            }
            Generator::CopyPlusNoise { noise_sd, k } => {
                if !(noise_sd.is_finite() && *noise_sd >= 0.0) {
                    return invalid(format!("noise_sd must be finite and >= 0, got {noise_sd}"));
                }
                if *k < 2 {
                    return invalid(format!("k must be at least 2, got {k}"));
                }
            }
            Generator::ProductOfMarginals { marginals } => {
                if marginals.len() < 2 {
                    return invalid("a product law needs at least two marginals");
                }
                for m in marginals {
                    m.validate()?;
                }
            }
            Generator::RotatedUniform { angle } => {
                if !angle.is_finite() {
                    return invalid("angle must be finite");
                }
            }
        }
        Ok(())
    }

    /// Population standard deviation of every coordinate.
    pub fn true_sd(&self) -> Vec<f64> {
        match self {
            Generator::DiscreteJointSampler { joint } => (0..joint.k()).map(|k| joint.moments(k).1).collect(),
            Generator::BivariateGaussian { .. } | Generator::RotatedUniform { .. } => vec![1.0, 1.0],
            Generator::CopyPlusNoise { noise_sd, k } => {
                let mut sd = vec![(1.0 + noise_sd * noise_sd).sqrt(); *k];
                sd[0] = 1.0;
                sd
            }
            Generator::ProductOfMarginals { marginals } => marginals.iter().map(Marginal::sd).collect(),
        }
    }

    /// Covariance matrix when the law is jointly Gaussian.
    pub fn gaussian_covariance(&self) -> Option<Vec<Vec<f64>>> {
        match self {
            Generator::BivariateGaussian { rho } => Some(vec![vec![1.0, *rho], vec![*rho, 1.0]]),
            Generator::CopyPlusNoise { noise_sd, k } => {
                let v = noise_sd * noise_sd;
                Some(
                    (0..*k)
                        .map(|i| (0..*k).map(|j| if i == j && i > 0 { 1.0 + v } else { 1.0 }).collect())
                        .collect(),
                )
            }
            Generator::ProductOfMarginals { marginals }
                if marginals.iter().all(|m| matches!(m, Marginal::Normal { .. })) =>
            {
                let n = marginals.len();
                Some(
                    (0..n)
                        .map(|i| (0..n).map(|j| if i == j { marginals[i].sd().powi(2) } else { 0.0 }).collect())
                        .collect(),
                )
            }
            _ => None,
        }
    }

    /// Whether the coordinates are mutually independent.
    pub fn is_product(&self) -> bool {
        match self {
            Generator::DiscreteJointSampler { joint } => discrete_factorizes(joint),
            Generator::BivariateGaussian { rho } => *rho == 0.0,
            Generator::CopyPlusNoise { .. } => false,
            Generator::ProductOfMarginals { .. } => true,
            Generator::RotatedUniform { angle } => {
                let r = angle.rem_euclid(PI / 2.0);
                r.abs() < 1e-12 || (PI / 2.0 - r).abs() < 1e-12
            }
        }
    }

    /// `Q` of the law with the true standard deviations as scale factors,
    /// when it is available in closed form.
    pub fn exact_q(&self, kernel: &KernelSpec) -> Result<Option<f64>, SimError> {
        let sigma = ScaleFactors::user(self.true_sd())?;
        if self.is_product() {
            return Ok(Some(0.0));
        }
        match self {
            Generator::DiscreteJointSampler { joint } => Ok(Some(exact_q_discrete(joint, kernel, &sigma)?)),
            _ => match self.gaussian_covariance() {
                Some(cov) if kernel.family() == qdep_core::KernelFamily::Gaussian => {
                    Ok(Some(exact_q_gaussian(&cov, kernel, &sigma)?))
                }
                _ => Ok(None),
            },
        }
    }

    fn fill_row(&self, rng: &mut ChaCha8Rng, sampler: Option<&WeightedIndex<f64>>, row: &mut [f64]) {
        match self {
            Generator::DiscreteJointSampler { joint } => {
                let i = sampler.expect("sampler built for discrete laws").sample(rng);
                row.copy_from_slice(&joint.support()[i]);
            }
            Generator::BivariateGaussian { rho } => {
                let z1: f64 = rng.sample(StandardNormal);
                let z2: f64 = rng.sample(StandardNormal);
                row[0] = z1;
                row[1] = rho * z1 + (1.0 - rho * rho).sqrt() * z2;
            }
            Generator::CopyPlusNoise { noise_sd, .. } => {
                let y1: f64 = rng.sample(StandardNormal);
                row[0] = y1;
                for v in &mut row[1..] {
                    *v = y1 + noise_sd * rng.sample::<f64, _>(StandardNormal);
                }
            }
            Generator::ProductOfMarginals { marginals } => {
                for (v, m) in row.iter_mut().zip(marginals) {
                    *v = m.draw(rng);
                }
            }
            Generator::RotatedUniform { angle } => {
                let half = 3f64.sqrt();
                let u1 = half * (2.0 * rng.random::<f64>() - 1.0);
                let u2 = half * (2.0 * rng.random::<f64>() - 1.0);
                let (s, c) = angle.sin_cos();
                row[0] = c * u1 - s * u2;
                row[1] = s * u1 + c * u2;
            }
        }
    }
}

fn discrete_factorizes(joint: &DiscreteJoint) -> bool {
    let marginals: Vec<(Vec<f64>, Vec<f64>)> = (0..joint.k()).map(|k| joint.marginal(k)).collect();
    let mass = |k: usize, v: f64| -> f64 {
        let (vals, ps) = &marginals[k];
        vals.iter().position(|&x| x == v).map_or(0.0, |i| ps[i])
    };
    // If every atom carries its product mass, the product grid cells missing
    // from the support carry none, since both sides sum to one.
    joint.support().iter().zip(joint.probs()).all(|(atom, &p)| {
        let q: f64 = atom.iter().enumerate().map(|(k, &v)| mass(k, v)).product();
        (p - q).abs() <= 1e-12
    })
}

/// A generator together with the sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub generator: Generator,
    pub n: usize,
}

impl Scenario {
    pub fn new(generator: Generator, n: usize) -> Result<Self, SimError> {
        generator.validate()?;
        if n < 2 {
            return invalid(format!("n must be at least 2, got {n}"));
        }
        Ok(Scenario { generator, n })
    }

    pub fn k(&self) -> usize {
        self.generator.k()
    }

    pub fn with_n(&self, n: usize) -> Result<Self, SimError> {
        Scenario::new(self.generator.clone(), n)
    }

    /// True standard deviations as user-supplied scale factors.
    pub fn true_sigma(&self) -> Result<ScaleFactors, SimError> {
        Ok(ScaleFactors::user(self.generator.true_sd())?)
    }
}

/// Draws replicate `replicate_index` of `scenario`.
///
/// Each `(seed, replicate_index)` pair selects its own ChaCha8 stream, so
/// replicates can be generated in any order and on any thread.
pub fn generate(scenario: &Scenario, seed: u64, replicate_index: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate_index);
    let sampler = match &scenario.generator {
        Generator::DiscreteJointSampler { joint } => {
            Some(WeightedIndex::new(joint.probs()).expect("validated probabilities"))
        }
        _ => None,
    };
    let k = scenario.k();
    let mut columns = vec![Vec::with_capacity(scenario.n); k];
    let mut row = vec![0.0; k];
    for _ in 0..scenario.n {
        scenario.generator.fill_row(&mut rng, sampler.as_ref(), &mut row);
        for (col, &v) in columns.iter_mut().zip(&row) {
            col.push(v);
        }
    }
    Sample::from_columns(columns).expect("generated samples are finite and rectangular")
}
