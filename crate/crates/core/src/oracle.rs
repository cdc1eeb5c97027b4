//! Reference values for `Q`: exact sums for finite laws, a closed form for
//! Gaussian laws, the small-bandwidth density limit and a literal estimator.

use alloc::boxed::Box;
use alloc::vec::Vec;

use libm::{pow, sqrt};

use crate::error::{Error, Result};
use crate::estimator::{Sample, ScaleFactors};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::sum::Neumaier;

/// A finite joint law: `M` distinct atoms in `R^K` with probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteJoint {
    support: Vec<Vec<f64>>,
    probs: Vec<f64>,
}

impl DiscreteJoint {
    pub fn new(support: Vec<Vec<f64>>, probs: Vec<f64>) -> Result<Self> {
        let m = support.len();
        if m == 0 {
            return Err(Error::InvalidJoint("at least one atom is required".into()));
        }
        if probs.len() != m {
            return Err(Error::InvalidJoint(alloc::format!("{m} atoms but {} probabilities", probs.len())));
        }
        let k = support[0].len();
        if k < 2 {
            return Err(Error::InvalidJoint("atoms need at least two coordinates".into()));
        }
        for (i, atom) in support.iter().enumerate() {
            if atom.len() != k {
                return Err(Error::InvalidJoint(alloc::format!("atom {i} has {} coordinates, expected {k}", atom.len())));
            }
            if atom.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidJoint(alloc::format!("atom {i} is not finite")));
            }
            if support[..i].iter().any(|other| other == atom) {
                return Err(Error::InvalidJoint(alloc::format!("atom {i} repeats an earlier atom")));
            }
        }
        if let Some(i) = probs.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidJoint(alloc::format!("probability {i} is negative or not finite")));
        }
        let total = crate::sum::sum(&probs);
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidJoint(alloc::format!("probabilities sum to {total}")));
        }
        Ok(DiscreteJoint { support, probs })
    }

    /// Product of independent marginals given as `(values, probs)` pairs.
    pub fn product(marginals: &[(Vec<f64>, Vec<f64>)]) -> Result<Self> {
        let mut support: Vec<Vec<f64>> = alloc::vec![Vec::new()];
        let mut probs = alloc::vec![1.0];
        for (vals, ps) in marginals {
            let mut s2 = Vec::with_capacity(support.len() * vals.len());
            let mut p2 = Vec::with_capacity(support.len() * vals.len());
            for (atom, p) in support.iter().zip(&probs) {
                for (v, q) in vals.iter().zip(ps) {
                    let mut a = atom.clone();
                    a.push(*v);
                    s2.push(a);
                    p2.push(p * q);
                }
            }
            support = s2;
            probs = p2;
        }
        DiscreteJoint::new(support, probs)
    }

    pub fn support(&self) -> &[Vec<f64>] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn atoms(&self) -> usize {
        self.support.len()
    }

    pub fn k(&self) -> usize {
        self.support[0].len()
    }

    /// Marginal law of coordinate `k` with equal values merged, sorted.
    pub fn marginal(&self, k: usize) -> (Vec<f64>, Vec<f64>) {
        let mut pairs: Vec<(f64, f64)> = self.support.iter().zip(&self.probs).map(|(a, &p)| (a[k], p)).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut vals: Vec<f64> = Vec::new();
        let mut ps: Vec<f64> = Vec::new();
        for (v, p) in pairs {
            if vals.last() == Some(&v) {
                *ps.last_mut().expect("nonempty") += p;
            } else {
                vals.push(v);
                ps.push(p);
            }
        }
        (vals, ps)
    }

    /// Mean and population standard deviation of coordinate `k`.
    pub fn moments(&self, k: usize) -> (f64, f64) {
        let mean: Neumaier = self.support.iter().zip(&self.probs).map(|(a, p)| p * a[k]).collect();
        let mean = mean.value();
        let var: Neumaier = self
            .support
            .iter()
            .zip(&self.probs)
            .map(|(a, p)| p * (a[k] - mean) * (a[k] - mean))
            .collect();
        (mean, sqrt(var.value()))
    }
}

/// The three population terms of `Q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactTerms {
    /// `E[π_Y(Y)]`
    pub theta1: f64,
    /// `Π_k E[π_k(Y_k)]`
    pub theta2: f64,
    /// `E[Π_k π_k(Y_k)]`
    pub theta3: f64,
}

impl ExactTerms {
    pub fn q(&self) -> f64 {
        0.5 * (self.theta1 + self.theta2 - 2.0 * self.theta3)
    }
}

/// Exact terms for a finite law, in `O(K M²)`.
pub fn exact_terms_discrete(joint: &DiscreteJoint, kernel: &KernelSpec, sigma: &ScaleFactors) -> Result<ExactTerms> {
    sigma.check_len(joint.k())?;
    let m = joint.atoms();
    let k = joint.k();
    let sup = &joint.support;
    let pr = &joint.probs;
    let a = |kk: usize, i: usize, j: usize| kernel.eval_k2((sup[i][kk] - sup[j][kk]) / sigma.values()[kk]);
    let mut t1 = Neumaier::new();
    let mut marg = alloc::vec![Neumaier::new(); k];
    let mut t3 = Neumaier::new();
    let mut pi = alloc::vec![0.0; k];
    for i in 0..m {
        pi.iter_mut().for_each(|v| *v = 0.0);
        let mut row = Neumaier::new();
        for j in 0..m {
            let mut prod = 1.0;
            for (kk, slot) in pi.iter_mut().enumerate() {
                let v = a(kk, i, j);
                prod *= v;
                *slot += pr[j] * v;
            }
            row.add(pr[j] * prod);
        }
        t1.add(pr[i] * row.value());
        for (acc, v) in marg.iter_mut().zip(&pi) {
            acc.add(pr[i] * v);
        }
        t3.add(pr[i] * pi.iter().product::<f64>());
    }
    Ok(ExactTerms {
        theta1: t1.value(),
        theta2: marg.iter().map(Neumaier::value).product(),
        theta3: t3.value(),
    })
}

/// Exact `Q` for a finite joint law.
pub fn exact_q_discrete(joint: &DiscreteJoint, kernel: &KernelSpec, sigma: &ScaleFactors) -> Result<f64> {
    Ok(exact_terms_discrete(joint, kernel, sigma)?.q())
}

fn determinant(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .expect("nonempty range");
        if a[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            a.swap(p, c);
            det = -det;
        }
        det *= a[c][c];
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for j in c..n {
                a[r][j] -= f * a[c][j];
            }
        }
    }
    det
}

/// Exact terms for a Gaussian law with covariance `cov` under the Gaussian
/// kernel. With `d_k = 1/(h σ_k)²`:
///
/// ```text
/// θ1 = h^{-K} det(I + 4 Σ D)^{-1/2}
/// θ2 = Π_k h^{-1} (1 + 4 Σ_kk d_k)^{-1/2}
/// θ3 = Π_k h^{-1} (1 + 2 Σ_kk d_k)^{-1/2} · det(I + 2 Σ E)^{-1/2},
///      E = diag(d_k / (1 + 2 Σ_kk d_k))
/// ```
pub fn exact_terms_gaussian(cov: &[Vec<f64>], kernel: &KernelSpec, sigma: &ScaleFactors) -> Result<ExactTerms> {
    if kernel.family() != KernelFamily::Gaussian {
        return Err(Error::InvalidArgument("the Gaussian closed form needs the gaussian kernel".into()));
    }
    let k = cov.len();
    sigma.check_len(k)?;
    if let Some(row) = cov.iter().find(|r| r.len() != k) {
        return Err(Error::DimensionMismatch { expected: k, got: row.len() });
    }
    for i in 0..k {
        for j in 0..k {
            if !cov[i][j].is_finite() || (cov[i][j] - cov[j][i]).abs() > 1e-12 * (1.0 + cov[i][j].abs()) {
                return Err(Error::InvalidArgument("covariance must be finite and symmetric".into()));
            }
        }
    }
    let h = kernel.bandwidth();
    let d: Vec<f64> = sigma.values().iter().map(|s| 1.0 / (h * h * s * s)).collect();
    let scaled = |w: &dyn Fn(usize) -> f64| -> f64 {
        let m: Vec<Vec<f64>> = (0..k)
            .map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 } + cov[i][j] * w(j)).collect())
            .collect();
        determinant(m)
    };
    let det1 = scaled(&|j| 4.0 * d[j]);
    let denom: Vec<f64> = (0..k).map(|j| 1.0 + 2.0 * cov[j][j] * d[j]).collect();
    let det3 = scaled(&|j| 2.0 * d[j] / denom[j]);
    if !(det1 > 0.0 && det3 > 0.0) {
        return Err(Error::InvalidArgument("covariance is not positive semidefinite".into()));
    }
    let hk = pow(h, -(k as f64));
    Ok(ExactTerms {
        theta1: hk / sqrt(det1),
        theta2: hk * (0..k).map(|j| 1.0 / sqrt(1.0 + 4.0 * cov[j][j] * d[j])).product::<f64>(),
        theta3: hk * denom.iter().map(|v| 1.0 / sqrt(*v)).product::<f64>() / sqrt(det3),
    })
}

/// Exact `Q` for a Gaussian law (the mean does not enter).
pub fn exact_q_gaussian(cov: &[Vec<f64>], kernel: &KernelSpec, sigma: &ScaleFactors) -> Result<f64> {
    Ok(exact_terms_gaussian(cov, kernel, sigma)?.q())
}

type Pdf2 = Box<dyn Fn(f64, f64) -> f64 + Send + Sync>;
type Pdf1 = Box<dyn Fn(f64) -> f64 + Send + Sync>;

/// A bivariate density with its marginals, on a rectangle.
pub struct DensityPair {
    pub joint: Pdf2,
    pub marginals: [Pdf1; 2],
    /// `[x_lo, x_hi, y_lo, y_hi]` in the original coordinates.
    pub bounds: [f64; 4],
    /// Simpson intervals per axis at the coarse resolution (even).
    pub grid: usize,
    /// Scale factors `σ_1, σ_2` defining the standardized coordinates.
    pub scale: [f64; 2],
}

impl core::fmt::Debug for DensityPair {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("DensityPair")
            .field("bounds", &self.bounds)
            .field("grid", &self.grid)
            .field("scale", &self.scale)
            .finish_non_exhaustive()
    }
}

impl DensityPair {
    /// Standard bivariate normal with correlation `rho` on `[-9, 9]²`.
    pub fn bivariate_normal(rho: f64) -> Result<Self> {
        if !(rho.abs() < 1.0) {
            return Err(Error::InvalidArgument(alloc::format!("correlation {rho} outside (-1, 1)")));
        }
        let norm = 1.0 / (2.0 * core::f64::consts::PI * sqrt(1.0 - rho * rho));
        let inv = 1.0 / (2.0 * (1.0 - rho * rho));
        let phi = |x: f64| libm::exp(-0.5 * x * x) / sqrt(2.0 * core::f64::consts::PI);
        Ok(DensityPair {
            joint: Box::new(move |x, y| norm * libm::exp(-(x * x - 2.0 * rho * x * y + y * y) * inv)),
            marginals: [Box::new(phi), Box::new(phi)],
            bounds: [-9.0, 9.0, -9.0, 9.0],
            grid: 256,
            scale: [1.0, 1.0],
        })
    }

    fn simpson(&self, intervals: usize) -> (f64, f64) {
        let [x0, x1, y0, y1] = self.bounds;
        let hx = (x1 - x0) / intervals as f64;
        let hy = (y1 - y0) / intervals as f64;
        let w = |i: usize| {
            if i == 0 || i == intervals {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            }
        };
        let my: Vec<f64> = (0..=intervals).map(|j| (self.marginals[1])(y0 + hy * j as f64)).collect();
        let mut diff = Neumaier::new();
        let mut mass = Neumaier::new();
        for i in 0..=intervals {
            let x = x0 + hx * i as f64;
            let mx = (self.marginals[0])(x);
            let mut rd = Neumaier::new();
            let mut rm = Neumaier::new();
            for (j, &myj) in my.iter().enumerate() {
                let y = y0 + hy * j as f64;
                let p = (self.joint)(x, y);
                let q = mx * myj;
                rd.add(w(j) * (p - q) * (p - q));
                rm.add(w(j) * (p * p + q * q));
            }
            diff.add(w(i) * rd.value());
            mass.add(w(i) * rm.value());
        }
        let c = hx * hy / 9.0;
        (diff.value() * c, mass.value() * c)
    }
}

/// `½ ∫ (p_Z - p_{Z_1} p_{Z_2})²` for the standardized `Z_k = Y_k/σ_k`.
///
/// The standardized density is `σ_1 σ_2 p(σ_1 z_1, σ_2 z_2)`, so the integral
/// equals `½ σ_1 σ_2 ∫ (p - p_1 p_2)² dy` in the original coordinates. This is
/// the `h → 0` limit of `Q / ψ(0)^2`, where `ψ(0)` is the kernel mass.
///
/// Simpson's rule is run with `grid` and `2 grid` intervals per axis. The
/// result is the Richardson combination of the two; it fails with
/// [`Error::GridTooCoarse`] if they differ by more than `1e-4` relative to
/// `½ ∫ (p² + (p_1 p_2)²)`.
pub fn density_limit_q(pair: &DensityPair) -> Result<f64> {
    if pair.grid < 2 || pair.grid % 2 != 0 {
        return Err(Error::InvalidArgument("grid must be even and at least 2".into()));
    }
    let (coarse, _) = pair.simpson(pair.grid);
    let (fine, mass) = pair.simpson(2 * pair.grid);
    let rel_change = (fine - coarse).abs() / mass;
    if rel_change > 1e-4 {
        return Err(Error::GridTooCoarse { rel_change });
    }
    let value = fine + (fine - coarse) / 15.0;
    Ok(0.5 * pair.scale[0] * pair.scale[1] * value)
}

/// Largest sample accepted by [`naive_q`].
pub const NAIVE_MAX_N: usize = 256;

/// Literal triple-loop evaluation of `Q̂` with no reuse between terms.
pub fn naive_q(sample: &Sample, kernel: &KernelSpec, sigma: &ScaleFactors) -> Result<f64> {
    sigma.check_len(sample.k())?;
    let n = sample.n();
    if n > NAIVE_MAX_N {
        return Err(Error::CostGuard {
            what: "naive estimator sample size",
            limit: NAIVE_MAX_N,
            got: n,
        });
    }
    let k = sample.k();
    let nf = n as f64;
    let s = sigma.values();
    let pi_joint = |i: usize| -> f64 {
        let mut acc = Neumaier::new();
        for m in 0..n {
            let mut prod = 1.0;
            for kk in 0..k {
                prod *= kernel.eval_k2((sample.value(i, kk) - sample.value(m, kk)) / s[kk]);
            }
            acc.add(prod);
        }
        acc.value() / nf
    };
    let pi_marg = |kk: usize, i: usize| -> f64 {
        let acc: Neumaier = (0..n)
            .map(|m| kernel.eval_k2((sample.value(i, kk) - sample.value(m, kk)) / s[kk]))
            .collect();
        acc.value() / nf
    };
    let term1: Neumaier = (0..n).map(pi_joint).collect();
    let mut term2 = 1.0;
    for kk in 0..k {
        let acc: Neumaier = (0..n).map(|i| pi_marg(kk, i)).collect();
        term2 *= acc.value() / nf;
    }
    let term3: Neumaier = (0..n).map(|i| (0..k).map(|kk| pi_marg(kk, i)).product::<f64>()).collect();
    Ok(0.5 * (term1.value() / nf + term2 - 2.0 * term3.value() / nf))
}
