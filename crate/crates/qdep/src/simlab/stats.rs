//! Summaries of Monte Carlo output, each with its standard error.

use serde::{Deserialize, Serialize};

/// Mean and variance of a batch with standard errors for both.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub count: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub var: f64,
    pub se_mean: f64,
    /// Large-sample standard error of `var`, `sqrt((m4 - var²) / count)`.
    pub se_var: f64,
}

impl Moments {
    pub fn of(xs: &[f64]) -> Moments {
        let n = xs.len();
        if n == 0 {
            return Moments {
                count: 0,
                mean: f64::NAN,
                var: f64::NAN,
                se_mean: f64::NAN,
                se_var: f64::NAN,
            };
        }
        let nf = n as f64;
        let mean = xs.iter().sum::<f64>() / nf;
        let (mut m2, mut m4) = (0.0, 0.0);
        for &x in xs {
            let d = (x - mean) * (x - mean);
            m2 += d;
            m4 += d * d;
        }
        let var = if n > 1 { m2 / (nf - 1.0) } else { 0.0 };
        let m2n = m2 / nf;
        Moments {
            count: n,
            mean,
            var,
            se_mean: (var / nf).sqrt(),
            se_var: ((m4 / nf - m2n * m2n).max(0.0) / nf).sqrt(),
        }
    }
}

/// Binomial proportion with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub hits: usize,
    pub trials: usize,
    pub rate: f64,
    pub se: f64,
}

impl Rate {
    pub fn new(hits: usize, trials: usize) -> Option<Rate> {
        if trials == 0 {
            return None;
        }
        let rate = hits as f64 / trials as f64;
        Some(Rate {
            hits,
            trials,
            rate,
            se: (rate * (1.0 - rate) / trials as f64).sqrt(),
        })
    }
}

/// Kolmogorov–Smirnov distance between the empirical law of `sorted` and `cdf`.
pub fn ks_distance(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    sorted.iter().enumerate().fold(0.0, |d, (i, &x)| {
        let f = cdf(x);
        d.max((i + 1) as f64 / n - f).max(f - i as f64 / n)
    })
}

/// Anderson–Darling normality statistic with mean and variance estimated from
/// the data, including the small-sample factor `1 + 0.75/n + 2.25/n²`.
pub fn anderson_darling_normal(xs: &[f64]) -> f64 {
    let n = xs.len();
    let m = Moments::of(xs);
    let sd = m.var.sqrt();
    let mut z: Vec<f64> = xs.iter().map(|&x| (x - m.mean) / sd).collect();
    z.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mut s = 0.0;
    for i in 0..n {
        let lo = qdep_core::special::normal_cdf(z[i]).max(1e-300);
        let hi = qdep_core::special::normal_cdf(-z[n - 1 - i]).max(1e-300);
        s += (2 * i + 1) as f64 * (lo.ln() + hi.ln());
    }
    let a2 = -nf - s / nf;
    a2 * (1.0 + 0.75 / nf + 2.25 / (nf * nf))
}

/// Critical value of [`anderson_darling_normal`] at level 0.01.
pub const AD_NORMAL_CRITICAL_1PCT: f64 = 1.092;

/// Least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
