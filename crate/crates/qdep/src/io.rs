//! File formats: sample CSV, discrete-law JSON, sweep and QQ tables.
//!
//! Every writer goes through [`write_atomic`], which writes a temporary file in
//! the destination directory and renames it into place.
//!
//! Sweep CSV columns, one row per `(h, n)` cell:
//!
//! ```text
//! h, n, replicates, exact_q, mean_q_hat, var_q_hat, se_mean_q_hat, se_var_q_hat,
//! rate_kind, rejection_rate, se_rejection_rate, type2_error, degenerate,
//! mean_e1, mean_v1, mean_gamma, mean_beta, mean_q_alpha, mean_var_leading,
//! mean_seconds, max_seconds
//! ```
//!
//! `rate_kind` is `size` when the generating law is a product and `power`
//! otherwise. Missing values are empty fields.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use qdep_core::{DiscreteJoint, Sample};
use serde::{Deserialize, Serialize};

use crate::simlab::{QqPoint, SweepResult};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("line {line}, column '{column}': '{value}' is not a number")]
    NotANumber { line: u64, column: String, value: String },
    #[error("line {line}, column '{column}': value is not finite")]
    NonFinite { line: u64, column: String },
    #[error("{0}")]
    Shape(String),
    #[error("{path}: {message}")]
    Json { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `path` by filling a temporary sibling and renaming it.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), IoError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    {
        let mut w = io::BufWriter::new(tmp.as_file_mut());
        fill(&mut w).map_err(io_err(path))?;
        w.flush().map_err(io_err(path))?;
    }
    tmp.persist(path).map_err(|e| IoError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

/// A sample with its column names.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedSample {
    pub names: Vec<String>,
    pub sample: Sample,
}

/// Parses a header row of names followed by one row per observation.
pub fn parse_sample_csv(reader: impl Read) -> Result<NamedSample, IoError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let csv_err = |e: csv::Error| IoError::Csv {
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    };
    let names: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if names.len() < 2 {
        return Err(IoError::Shape(format!("need at least two columns, the header has {}", names.len())));
    }
    let mut columns = vec![Vec::new(); names.len()];
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line());
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| IoError::NotANumber {
                line,
                column: names[j].clone(),
                value: field.to_string(),
            })?;
            if !v.is_finite() {
                return Err(IoError::NonFinite {
                    line,
                    column: names[j].clone(),
                });
            }
            columns[j].push(v);
        }
    }
    let sample = Sample::from_columns(columns).map_err(|e| IoError::Shape(e.to_string()))?;
    Ok(NamedSample { names, sample })
}

pub fn read_sample_csv(path: &Path) -> Result<NamedSample, IoError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    parse_sample_csv(io::BufReader::new(file)).map_err(|e| match e {
        IoError::Shape(m) => IoError::Shape(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Default column names `y1, ..., yK`.
pub fn default_names(k: usize) -> Vec<String> {
    (1..=k).map(|i| format!("y{i}")).collect()
}

pub fn format_sample_csv(names: &[String], sample: &Sample, out: &mut dyn Write) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(names)?;
    let mut row = Vec::with_capacity(sample.k());
    for n in 0..sample.n() {
        row.clear();
        row.extend((0..sample.k()).map(|k| sample.value(n, k).to_string()));
        w.write_record(&row)?;
    }
    w.flush()
}

pub fn write_sample_csv(path: &Path, names: &[String], sample: &Sample) -> Result<(), IoError> {
    write_atomic(path, |out| format_sample_csv(names, sample, out))
}

/// JSON form of a discrete law: `{"atoms": [[y1, ..., yK], ...], "probs": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointFile {
    pub atoms: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
}

impl JointFile {
    pub fn into_joint(self) -> qdep_core::Result<DiscreteJoint> {
        DiscreteJoint::new(self.atoms, self.probs)
    }
}

impl From<&DiscreteJoint> for JointFile {
    fn from(j: &DiscreteJoint) -> Self {
        JointFile {
            atoms: j.support().to_vec(),
            probs: j.probs().to_vec(),
        }
    }
}

pub fn read_joint_json(path: &Path) -> Result<DiscreteJoint, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let json_err = |message: String| IoError::Json {
        path: path.to_path_buf(),
        message,
    };
    let file: JointFile = serde_json::from_str(&text).map_err(|e| json_err(e.to_string()))?;
    file.into_joint().map_err(|e| json_err(e.to_string()))
}

pub fn write_joint_json(path: &Path, joint: &DiscreteJoint) -> Result<(), IoError> {
    write_json(path, &JointFile::from(joint))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    write_atomic(path, |out| {
        serde_json::to_writer_pretty(&mut *out, value)?;
        writeln!(out)
    })
}

pub const SWEEP_HEADER: [&str; 21] = [
    "h",
    "n",
    "replicates",
    "exact_q",
    "mean_q_hat",
    "var_q_hat",
    "se_mean_q_hat",
    "se_var_q_hat",
    "rate_kind",
    "rejection_rate",
    "se_rejection_rate",
    "type2_error",
    "degenerate",
    "mean_e1",
    "mean_v1",
    "mean_gamma",
    "mean_beta",
    "mean_q_alpha",
    "mean_var_leading",
    "mean_seconds",
    "max_seconds",
];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn format_sweep_csv(result: &SweepResult, out: &mut dyn Write) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for (c, t) in result.cells.iter().zip(&result.runtime) {
        w.write_record([
            c.h.to_string(),
            c.n.to_string(),
            c.q_hat.count.to_string(),
            opt(c.exact_q),
            c.q_hat.mean.to_string(),
            c.q_hat.var.to_string(),
            c.q_hat.se_mean.to_string(),
            c.q_hat.se_var.to_string(),
            (if c.null_holds { "size" } else { "power" }).to_string(),
            opt(c.rejection.map(|r| r.rate)),
            opt(c.rejection.map(|r| r.se)),
            opt(c.type2_error()),
            c.degenerate.to_string(),
            opt(c.mean_e1),
            opt(c.mean_v1),
            opt(c.mean_gamma),
            opt(c.mean_beta),
            opt(c.mean_q_alpha),
            opt(c.mean_var_leading),
            t.mean_seconds.to_string(),
            t.max_seconds.to_string(),
        ])?;
    }
    w.flush()
}

pub fn write_sweep_csv(path: &Path, result: &SweepResult) -> Result<(), IoError> {
    write_atomic(path, |out| format_sweep_csv(result, out))
}

/// Two columns, `theoretical,empirical`.
pub fn write_qq_csv(path: &Path, qq: &[QqPoint]) -> Result<(), IoError> {
    write_atomic(path, |out| {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["theoretical", "empirical"])?;
        for p in qq {
            w.write_record([p.theoretical.to_string(), p.empirical.to_string()])?;
        }
        w.flush()
    })
}
