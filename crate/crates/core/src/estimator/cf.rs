//! `Q̂` through the empirical characteristic functions, by direct quadrature.
//!
//! ```text
//! Q̂ = ½ (2π h)^{-K} ∫ Π_k ψ(u_k) |φ̂(u) - Π_k φ̂_k(u_k)|² du
//! ```
//!
//! where `φ̂` is the empirical characteristic function of `w_k = Y_k/(σ_k h)`.
//! Nothing here touches `K2` itself, which makes it an independent check on
//! the double-sum estimator.

use alloc::vec::Vec;
use core::f64::consts::PI;

use libm::{ceil, cos, sin};

use super::{Sample, ScaleFactors};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::quad;
use crate::sum::Neumaier;

/// Controls for [`estimate_q_cf`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSettings {
    /// The box is truncated where the kernel transform drops below this
    /// fraction of its maximum.
    pub weight_cutoff: f64,
    /// Upper bound allowed for the integral mass discarded by truncation.
    pub tail_budget: f64,
    pub nodes_per_panel: usize,
    pub min_panels: usize,
    /// Panel width is chosen so that the fastest oscillation advances at most
    /// this many radians per panel.
    pub radians_per_panel: f64,
}

impl Default for QuadratureSettings {
    fn default() -> Self {
        QuadratureSettings {
            weight_cutoff: 1e-12,
            tail_budget: 1e-9,
            nodes_per_panel: 16,
            min_panels: 4,
            radians_per_panel: 3.0,
        }
    }
}

/// Largest sample accepted by [`estimate_q_cf`].
pub const CF_MAX_N: usize = 64;

struct Axis {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// cos/sin of `u · w(n)` laid out as `[node][n]`.
    cos: Vec<f64>,
    sin: Vec<f64>,
    /// Marginal empirical characteristic function at each node.
    marg: Vec<(f64, f64)>,
}

impl Axis {
    fn build(w: &[f64], nodes: Vec<f64>, weights: Vec<f64>) -> Axis {
        let n = w.len();
        let inv_n = 1.0 / n as f64;
        let mut c = Vec::with_capacity(nodes.len() * n);
        let mut s = Vec::with_capacity(nodes.len() * n);
        let mut marg = Vec::with_capacity(nodes.len());
        for &u in &nodes {
            let mut re = Neumaier::new();
            let mut im = Neumaier::new();
            for &x in w {
                let (cv, sv) = (cos(u * x), sin(u * x));
                c.push(cv);
                s.push(sv);
                re.add(cv);
                im.add(sv);
            }
            marg.push((re.value() * inv_n, im.value() * inv_n));
        }
        Axis {
            nodes,
            weights,
            cos: c,
            sin: s,
            marg,
        }
    }
}

/// Independent quadrature route to `Q̂` for `K = 2`, `N <= 64`.
///
/// Fails with [`Error::TruncationTooTight`] when the weight mass outside the
/// truncation box, times the bound `|D̂|² <= 4`, exceeds `tail_budget`.
pub fn estimate_q_cf(sample: &Sample, kernel: &KernelSpec, sigma: &ScaleFactors, settings: &QuadratureSettings) -> Result<f64> {
    sigma.check_len(sample.k())?;
    if sample.k() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: sample.k(),
        });
    }
    if sample.n() > CF_MAX_N {
        return Err(Error::CostGuard {
            what: "characteristic-function quadrature sample size",
            limit: CF_MAX_N,
            got: sample.n(),
        });
    }
    let n = sample.n();
    let h = kernel.bandwidth();
    let family = kernel.family();

    // Centering each column only multiplies both characteristic functions by
    // the same phase, so |D̂| is unchanged.
    let w: Vec<Vec<f64>> = (0..2)
        .map(|k| {
            let col = sample.column(k);
            let mean = crate::sum::sum(col) / n as f64;
            let scale = 1.0 / (sigma.values()[k] * h);
            col.iter().map(|&v| (v - mean) * scale).collect()
        })
        .collect();

    let t_max = family.fourier_cutoff(settings.weight_cutoff);

    // Mass of one axis weight beyond ±t_max, via the half-line map.
    let tail_1d = 2.0
        * quad::integrate(
            |t| {
                let s = 1.0 - t;
                family.fourier(t_max + t / s) / (s * s)
            },
            0.0,
            1.0,
            1e-300,
            1e-10,
        )?;
    let mass_1d = 2.0 * PI * family.k2(0.0);
    let outer_2d = 2.0 * mass_1d * tail_1d - tail_1d * tail_1d;
    let tail = 0.5 * 4.0 * outer_2d / ((2.0 * PI * h) * (2.0 * PI * h));
    if tail > settings.tail_budget {
        return Err(Error::TruncationTooTight {
            tail,
            budget: settings.tail_budget,
        });
    }

    let rule = quad::gauss_legendre(settings.nodes_per_panel);
    let panels = |col: &[f64]| -> usize {
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let omega = hi - lo;
        (ceil(omega * t_max / settings.radians_per_panel) as usize).max(settings.min_panels)
    };

    // |D̂(-u)| = |D̂(u)|, so the first axis only covers [0, t_max].
    let (x1, w1) = quad::composite_nodes(0.0, t_max, panels(&w[0]), &rule);
    let p2 = panels(&w[1]);
    let (mut x2, mut w2) = quad::composite_nodes(-t_max, 0.0, p2, &rule);
    let (x2b, w2b) = quad::composite_nodes(0.0, t_max, p2, &rule);
    x2.extend(x2b);
    w2.extend(w2b);

    let a1 = Axis::build(&w[0], x1, w1);
    let a2 = Axis::build(&w[1], x2, w2);
    let inv_n = 1.0 / n as f64;

    let mut total = Neumaier::new();
    for i in 0..a1.nodes.len() {
        let wi = a1.weights[i] * family.fourier(a1.nodes[i]);
        if wi == 0.0 {
            continue;
        }
        let c1 = &a1.cos[i * n..(i + 1) * n];
        let s1 = &a1.sin[i * n..(i + 1) * n];
        let (m1r, m1i) = a1.marg[i];
        let mut row = Neumaier::new();
        for j in 0..a2.nodes.len() {
            let c2 = &a2.cos[j * n..(j + 1) * n];
            let s2 = &a2.sin[j * n..(j + 1) * n];
            let mut re = 0.0;
            let mut im = 0.0;
            for m in 0..n {
                re += c1[m] * c2[m] - s1[m] * s2[m];
                im += s1[m] * c2[m] + c1[m] * s2[m];
            }
            let (m2r, m2i) = a2.marg[j];
            let dr = re * inv_n - (m1r * m2r - m1i * m2i);
            let di = im * inv_n - (m1r * m2i + m1i * m2r);
            row.add(a2.weights[j] * family.fourier(a2.nodes[j]) * (dr * dr + di * di));
        }
        total.add(wi * row.value());
    }
    Ok(2.0 * 0.5 * total.value() / ((2.0 * PI * h) * (2.0 * PI * h)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::estimate_q;
    use crate::kernels::KernelFamily;

    #[test]
    fn two_point_example_matches_double_sum() {
        let s = Sample::from_rows(&[[0.0, 0.0], [1.0, 1.0]]).unwrap();
        let k = KernelSpec::new(KernelFamily::Gaussian, 1.0).unwrap();
        let sig = ScaleFactors::unit(2);
        let cf = estimate_q_cf(&s, &k, &sig, &QuadratureSettings::default()).unwrap();
        let q = estimate_q(&s, &k, &sig).unwrap().q_hat;
        assert!((cf - q).abs() < 1e-6, "{cf} vs {q}");
    }

    #[test]
    fn identical_rows_vanish() {
        let s = Sample::from_rows(&[[0.4, 2.0]; 5]).unwrap();
        for f in KernelFamily::ALL {
            let k = KernelSpec::new(f, 1.0).unwrap();
            let cf = estimate_q_cf(&s, &k, &ScaleFactors::unit(2), &QuadratureSettings::default()).unwrap();
            assert!(cf.abs() < 1e-10, "{f}: {cf}");
        }
    }

    #[test]
    fn guards() {
        let k = KernelSpec::new(KernelFamily::Gaussian, 1.0).unwrap();
        let big: Vec<[f64; 2]> = (0..65).map(|i| [i as f64, (i * i) as f64]).collect();
        let s = Sample::from_rows(&big).unwrap();
        assert!(matches!(
            estimate_q_cf(&s, &k, &ScaleFactors::unit(2), &QuadratureSettings::default()),
            Err(Error::CostGuard { .. })
        ));
        let s3 = Sample::from_rows(&[[0.0, 1.0, 2.0], [1.0, 0.0, 2.0]]).unwrap();
        assert!(estimate_q_cf(&s3, &k, &ScaleFactors::unit(3), &QuadratureSettings::default()).is_err());

        let s = Sample::from_rows(&[[0.0, 0.0], [1.0, 1.0]]).unwrap();
        let loose = QuadratureSettings {
            weight_cutoff: 1e-3,
            ..QuadratureSettings::default()
        };
        assert!(matches!(
            estimate_q_cf(&s, &k, &ScaleFactors::unit(2), &loose),
            Err(Error::TruncationTooTight { .. })
        ));
    }
}
