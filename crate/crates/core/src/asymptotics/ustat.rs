//! U-statistic decomposition of the three estimator terms.
//!
//! Each V-statistic term `U'_i` is a sum over unrestricted index tuples. The
//! matching U-statistic `U_i` restricts to pairwise distinct indices:
//!
//! ```text
//! U_1 = 1/(N)_2       Σ_{n≠m}          Π_k A_k(n, m)
//! U_2 = 1/(N)_{2K}    Σ_{distinct i,j} Π_k A_k(i_k, j_k)
//! U_3 = 1/(N)_{K+1}   Σ_{distinct n,m} Π_k A_k(n, m_k)
//! ```
//!
//! with `(N)_r` the falling factorial, and `U'_i = c_i U_i + b_i/√N` where
//! `c_i = (N)_r / N^r`. The distinct sums come from Möbius inversion over set
//! partitions of the index tuple: every partition's unrestricted sum is a
//! contraction of a small graph whose edges are the kernel matrices.

use alloc::vec::Vec;

use libm::sqrt;

use crate::error::{Error, Result};
use crate::estimator::{PairKernel, Sample, ScaleFactors};
use crate::kernels::KernelSpec;
use crate::sum::Neumaier;

/// Largest `K` handled by [`ustat_decompose`]; the `U_2` tuple has `2K`
/// indices and Bell(2K) partitions.
pub const USTAT_MAX_K: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct UStatDecomposition {
    pub u1: f64,
    pub u2: f64,
    pub u3: f64,
    /// `√N (U'_i - c_i U_i)`.
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    /// `U'_i`, i.e. the V-statistic terms.
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
    /// `½ (U'_1 + U'_2 - 2 U'_3)` rebuilt from `c_i U_i + b_i/√N`.
    pub q_hat_reconstructed: f64,
    pub n: usize,
}

impl UStatDecomposition {
    /// `½ (U_1 + U_2 - 2 U_3)`, unbiased for `Q` when `σ` does not depend on
    /// the sample.
    pub fn unbiased_q(&self) -> f64 {
        0.5 * (self.u1 + self.u2 - 2.0 * self.u3)
    }
}

/// `(N)_r / N^r`.
fn falling_ratio(n: usize, r: usize) -> f64 {
    let nf = n as f64;
    (0..r).map(|i| (nf - i as f64) / nf).product()
}

fn falling(n: usize, r: usize) -> f64 {
    (0..r).map(|i| (n - i) as f64).product()
}

/// Decomposes `Q̂` into its U-statistic parts. Requires `N >= 2K` and
/// `K <= 4`. Memory is `K N²`; partitions that close a cycle cost `O(N³)`.
pub fn ustat_decompose(sample: &Sample, kernel: &KernelSpec, sigma: &ScaleFactors) -> Result<UStatDecomposition> {
    sigma.check_len(sample.k())?;
    let n = sample.n();
    let k = sample.k();
    if k > USTAT_MAX_K {
        return Err(Error::CostGuard {
            what: "U-statistic decomposition variable count",
            limit: USTAT_MAX_K,
            got: k,
        });
    }
    if n < 2 * k {
        return Err(Error::SampleTooSmall { n, required: 2 * k });
    }
    let pk = PairKernel::new(sample, kernel, sigma);
    let mats: Vec<Vec<f64>> = (0..k)
        .map(|kk| {
            let mut m = alloc::vec![0.0; n * n];
            for i in 0..n {
                for j in i..n {
                    let v = pk.value(kk, i, j);
                    m[i * n + j] = v;
                    m[j * n + i] = v;
                }
            }
            m
        })
        .collect();

    // term1 and U_1 directly.
    let mut all = Neumaier::new();
    let mut diag = Neumaier::new();
    for i in 0..n {
        for j in 0..n {
            let p: f64 = mats.iter().map(|m| m[i * n + j]).product();
            all.add(p);
            if i == j {
                diag.add(p);
            }
        }
    }
    let nf = n as f64;
    let v1 = all.value() / (nf * nf);
    let u1 = (all.value() - diag.value()) / (nf * (nf - 1.0));

    // U_2: nodes 2k, 2k+1 joined by A_k.
    let edges2: Vec<(usize, usize, usize)> = (0..k).map(|kk| (2 * kk, 2 * kk + 1, kk)).collect();
    let (full2, distinct2) = distinct_sum(2 * k, &edges2, &mats, n);
    // U_3: node 0 joined to node 1 + k by A_k.
    let edges3: Vec<(usize, usize, usize)> = (0..k).map(|kk| (0, kk + 1, kk)).collect();
    let (full3, distinct3) = distinct_sum(k + 1, &edges3, &mats, n);

    let v2 = full2 / libm::pow(nf, (2 * k) as f64);
    let v3 = full3 / libm::pow(nf, (k + 1) as f64);
    let u2 = distinct2 / falling(n, 2 * k);
    let u3 = distinct3 / falling(n, k + 1);

    let c1 = falling_ratio(n, 2);
    let c2 = falling_ratio(n, 2 * k);
    let c3 = falling_ratio(n, k + 1);
    let rn = sqrt(nf);
    let b1 = rn * (v1 - c1 * u1);
    let b2 = rn * (v2 - c2 * u2);
    let b3 = rn * (v3 - c3 * u3);
    let q_hat_reconstructed = 0.5 * ((c1 * u1 + b1 / rn) + (c2 * u2 + b2 / rn) - 2.0 * (c3 * u3 + b3 / rn));
    Ok(UStatDecomposition {
        u1,
        u2,
        u3,
        b1,
        b2,
        b3,
        v1,
        v2,
        v3,
        q_hat_reconstructed,
        n,
    })
}

/// Returns the unrestricted sum and the sum over pairwise distinct index
/// assignments of `Π_e M_e(x_a, x_b)` on a graph with `nodes` nodes.
fn distinct_sum(nodes: usize, edges: &[(usize, usize, usize)], mats: &[Vec<f64>], n: usize) -> (f64, f64) {
    let mut full = 0.0;
    let mut total = Neumaier::new();
    for_each_partition(nodes, |blocks, count| {
        let mu: f64 = (0..count)
            .map(|b| {
                let size = blocks.iter().filter(|&&x| x == b).count();
                let sign = if size % 2 == 1 { 1.0 } else { -1.0 };
                sign * (1..size).map(|i| i as f64).product::<f64>()
            })
            .product();
        let g = Graph::build(count, edges.iter().map(|&(a, b, m)| (blocks[a], blocks[b], m)), mats, n);
        let value = g.contract();
        if count == nodes {
            full = value;
        }
        total.add(mu * value);
    });
    (full, total.value())
}

/// Calls `f(block_of, block_count)` for every set partition of `0..n`, in
/// restricted-growth-string order.
fn for_each_partition<F: FnMut(&[usize], usize)>(n: usize, mut f: F) {
    let mut a = alloc::vec![0usize; n];
    let mut maxes = alloc::vec![0usize; n];
    loop {
        let count = a.iter().copied().max().map_or(0, |m| m + 1);
        f(&a, count);
        // next restricted growth string
        let mut i = n;
        loop {
            if i <= 1 {
                return;
            }
            i -= 1;
            if a[i] <= maxes[i] {
                a[i] += 1;
                for j in i + 1..n {
                    a[j] = 0;
                    maxes[j] = maxes[i].max(a[i]);
                }
                break;
            }
        }
    }
}

enum Mat<'a> {
    Base(&'a [f64]),
    Owned(Vec<f64>),
}

impl Mat<'_> {
    fn data(&self) -> &[f64] {
        match self {
            Mat::Base(s) => s,
            Mat::Owned(v) => v,
        }
    }
}

struct Edge<'a> {
    a: usize,
    b: usize,
    mat: Mat<'a>,
}

impl Edge<'_> {
    /// Matrix entry with `x` the value at node `u` and `y` at the other end.
    #[inline]
    fn from(&self, u: usize, x: usize, y: usize, n: usize) -> f64 {
        if self.a == u {
            self.mat.data()[x * n + y]
        } else {
            self.mat.data()[y * n + x]
        }
    }

    fn other(&self, u: usize) -> usize {
        if self.a == u {
            self.b
        } else {
            self.a
        }
    }
}

struct Graph<'a> {
    n: usize,
    weights: Vec<Option<Vec<f64>>>,
    edges: Vec<Edge<'a>>,
}

impl<'a> Graph<'a> {
    fn build<I: Iterator<Item = (usize, usize, usize)>>(count: usize, edges: I, mats: &'a [Vec<f64>], n: usize) -> Self {
        let mut g = Graph {
            n,
            weights: (0..count).map(|_| Some(alloc::vec![1.0; n])).collect(),
            edges: Vec::new(),
        };
        for (a, b, m) in edges {
            if a == b {
                let w = g.weights[a].as_mut().expect("live node");
                for (x, wx) in w.iter_mut().enumerate() {
                    *wx *= mats[m][x * n + x];
                }
            } else {
                g.edges.push(Edge {
                    a,
                    b,
                    mat: Mat::Base(&mats[m]),
                });
            }
        }
        g
    }

    fn merge_parallel(&mut self) {
        let n = self.n;
        let mut i = 0;
        while i < self.edges.len() {
            let mut j = i + 1;
            while j < self.edges.len() {
                let same = (self.edges[i].a == self.edges[j].a && self.edges[i].b == self.edges[j].b)
                    || (self.edges[i].a == self.edges[j].b && self.edges[i].b == self.edges[j].a);
                if same {
                    let other = self.edges.swap_remove(j);
                    let u = self.edges[i].a;
                    let mut m = alloc::vec![0.0; n * n];
                    for x in 0..n {
                        for y in 0..n {
                            m[x * n + y] = self.edges[i].from(u, x, y, n) * other.from(u, x, y, n);
                        }
                    }
                    self.edges[i].mat = Mat::Owned(m);
                } else {
                    j += 1;
                }
            }
            i += 1;
        }
    }

    fn degree(&self, u: usize) -> usize {
        self.edges.iter().filter(|e| e.a == u || e.b == u).count()
    }

    fn contract(mut self) -> f64 {
        let n = self.n;
        let mut result = 1.0;
        loop {
            self.merge_parallel();
            let live: Vec<usize> = (0..self.weights.len()).filter(|&u| self.weights[u].is_some()).collect();
            let Some(&u) = live.iter().min_by_key(|&&u| self.degree(u)) else {
                return result;
            };
            let w = self.weights[u].take().expect("live node");
            let incident: Vec<usize> = (0..self.edges.len())
                .filter(|&i| self.edges[i].a == u || self.edges[i].b == u)
                .collect();
            match incident.len() {
                0 => {
                    let s: Neumaier = w.iter().copied().collect();
                    result *= s.value();
                }
                1 => {
                    let e = self.edges.swap_remove(incident[0]);
                    let v = e.other(u);
                    let wv = self.weights[v].as_mut().expect("live node");
                    for (y, wy) in wv.iter_mut().enumerate() {
                        let s: Neumaier = (0..n).map(|x| w[x] * e.from(u, x, y, n)).collect();
                        *wy *= s.value();
                    }
                }
                2 => {
                    let (i0, i1) = (incident[0], incident[1]);
                    let e1 = self.edges.swap_remove(i0.max(i1));
                    let e0 = self.edges.swap_remove(i0.min(i1));
                    let (v, t) = (e0.other(u), e1.other(u));
                    let mut m = alloc::vec![0.0; n * n];
                    for x in 0..n {
                        if w[x] == 0.0 {
                            continue;
                        }
                        for y in 0..n {
                            let a = w[x] * e0.from(u, x, y, n);
                            if a == 0.0 {
                                continue;
                            }
                            let row = &mut m[y * n..(y + 1) * n];
                            for (z, slot) in row.iter_mut().enumerate() {
                                *slot += a * e1.from(u, x, z, n);
                            }
                        }
                    }
                    self.edges.push(Edge {
                        a: v,
                        b: t,
                        mat: Mat::Owned(m),
                    });
                }
                _ => {
                    // Condition on the value of `u`.
                    let mut acc = Neumaier::new();
                    for x in 0..n {
                        if w[x] == 0.0 {
                            continue;
                        }
                        let mut sub = Graph {
                            n,
                            weights: self.weights.clone(),
                            edges: Vec::new(),
                        };
                        for e in &self.edges {
                            if e.a == u || e.b == u {
                                let v = e.other(u);
                                let wv = sub.weights[v].as_mut().expect("live node");
                                for (y, wy) in wv.iter_mut().enumerate() {
                                    *wy *= e.from(u, x, y, n);
                                }
                            } else {
                                sub.edges.push(Edge {
                                    a: e.a,
                                    b: e.b,
                                    mat: Mat::Owned(e.mat.data().to_vec()),
                                });
                            }
                        }
                        acc.add(w[x] * sub.contract());
                    }
                    return result * acc.value();
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::estimate_q;
    use crate::kernels::KernelFamily;

    fn brute_u(sample: &Sample, kernel: &KernelSpec, sigma: &ScaleFactors) -> (f64, f64, f64) {
        let n = sample.n();
        let k = sample.k();
        let a = |kk: usize, i: usize, j: usize| {
            kernel.eval_k2((sample.value(i, kk) - sample.value(j, kk)) / sigma.values()[kk])
        };
        let mut s1 = 0.0;
        let mut c1 = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s1 += (0..k).map(|kk| a(kk, i, j)).product::<f64>();
                    c1 += 1.0;
                }
            }
        }
        let mut s2 = 0.0;
        let mut c2 = 0.0;
        let mut idx = alloc::vec![0usize; 2 * k];
        enumerate(n, &mut idx, 0, &mut |t| {
            if distinct(t) {
                s2 += (0..k).map(|kk| a(kk, t[2 * kk], t[2 * kk + 1])).product::<f64>();
                c2 += 1.0;
            }
        });
        let mut s3 = 0.0;
        let mut c3 = 0.0;
        let mut idx = alloc::vec![0usize; k + 1];
        enumerate(n, &mut idx, 0, &mut |t| {
            if distinct(t) {
                s3 += (0..k).map(|kk| a(kk, t[0], t[kk + 1])).product::<f64>();
                c3 += 1.0;
            }
        });
        (s1 / c1, s2 / c2, s3 / c3)
    }

    fn distinct(t: &[usize]) -> bool {
        (0..t.len()).all(|i| (i + 1..t.len()).all(|j| t[i] != t[j]))
    }

    fn enumerate(n: usize, idx: &mut Vec<usize>, pos: usize, f: &mut dyn FnMut(&[usize])) {
        if pos == idx.len() {
            f(idx);
            return;
        }
        for v in 0..n {
            idx[pos] = v;
            enumerate(n, idx, pos + 1, f);
        }
    }

    fn lcg_sample(n: usize, k: usize, seed: u64) -> Sample {
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let cols: Vec<Vec<f64>> = (0..k).map(|_| (0..n).map(|_| next()).collect()).collect();
        Sample::from_columns(cols).unwrap()
    }

    #[test]
    fn partitions_are_counted_by_bell_numbers() {
        for (n, bell) in [(1, 1), (2, 2), (3, 5), (4, 15), (6, 203), (8, 4140)] {
            let mut c = 0;
            for_each_partition(n, |_, _| c += 1);
            assert_eq!(c, bell);
        }
    }

    #[test]
    fn matches_brute_force_enumeration() {
        for (k, n, seed) in [(2, 6, 1), (3, 7, 2), (2, 4, 3)] {
            let s = lcg_sample(n, k, seed);
            let kern = KernelSpec::new(KernelFamily::SquareCauchy, 0.7).unwrap();
            let sig = ScaleFactors::unit(k);
            let d = ustat_decompose(&s, &kern, &sig).unwrap();
            let (u1, u2, u3) = brute_u(&s, &kern, &sig);
            assert!((d.u1 - u1).abs() < 1e-12, "u1 {} vs {u1}", d.u1);
            assert!((d.u2 - u2).abs() < 1e-12, "u2 {} vs {u2}", d.u2);
            assert!((d.u3 - u3).abs() < 1e-12, "u3 {} vs {u3}", d.u3);
        }
    }

    #[test]
    fn reconstruction_and_first_remainder() {
        let s = lcg_sample(10, 2, 9);
        let kern = KernelSpec::new(KernelFamily::Gaussian, 1.0).unwrap();
        let sig = ScaleFactors::unit(2);
        let d = ustat_decompose(&s, &kern, &sig).unwrap();
        let e = estimate_q(&s, &kern, &sig).unwrap();
        assert!((d.q_hat_reconstructed - e.q_hat).abs() < 1e-10);
        assert!((d.v1 - e.term1).abs() < 1e-13);
        assert!((d.v2 - e.term2).abs() < 1e-13);
        assert!((d.v3 - e.term3).abs() < 1e-13);
        assert!((d.b1 - 1.0 / sqrt(10.0)).abs() < 1e-12);
    }

    #[test]
    fn four_variables_with_cycles() {
        let s = lcg_sample(9, 4, 4);
        let kern = KernelSpec::new(KernelFamily::Gaussian, 0.9).unwrap();
        let sig = ScaleFactors::unit(4);
        let d = ustat_decompose(&s, &kern, &sig).unwrap();
        let e = estimate_q(&s, &kern, &sig).unwrap();
        assert!((d.v2 - e.term2).abs() < 1e-12);
        assert!((d.v3 - e.term3).abs() < 1e-12);
        let (_, _, u3) = brute_u(&s, &kern, &sig);
        assert!((d.u3 - u3).abs() < 1e-12);
    }

    #[test]
    fn guards() {
        let kern = KernelSpec::new(KernelFamily::Gaussian, 1.0).unwrap();
        let s = lcg_sample(3, 2, 5);
        assert!(matches!(
            ustat_decompose(&s, &kern, &ScaleFactors::unit(2)),
            Err(Error::SampleTooSmall { n: 3, required: 4 })
        ));
        let s = lcg_sample(12, 5, 5);
        assert!(matches!(
            ustat_decompose(&s, &kern, &ScaleFactors::unit(5)),
            Err(Error::CostGuard { .. })
        ));
    }
}
