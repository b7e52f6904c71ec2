//! Harmonic analysis on the unit sphere `S^{d-1}`.
//!
//! Everything here is expressed through zonal quantities: the dimension-`d`
//! Legendre (normalized Gegenbauer) polynomials `P_k`, the dimension `N(d,k)`
//! of the degree-`k` harmonic space, and the one-dimensional measure
//! `(ω_{d-2}/ω_{d-1}) (1 - t²)^{(d-3)/2} dt` on `[-1, 1]`, which is the law of
//! `⟨x, w⟩` for `x` uniform on the sphere and any fixed unit `w`.

use std::fmt;

use faer::{Mat, Side};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarmonicsError {
    #[error("sphere dimension d = {0} is not supported (need d >= 3)")]
    DimensionTooSmall(usize),
    #[error("harmonic dimension N({d}, {k}) does not fit in 64 bits")]
    Overflow { d: usize, k: usize },
    #[error("quadrature needs at least 4 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("quadrature node {index} did not converge after {iterations} Newton steps")]
    NoConvergence { index: usize, iterations: usize },
}

/// Ambient dimension `d` of the sphere `S^{d-1}`, with `d >= 3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct SphereDim(usize);

impl SphereDim {
    pub fn new(d: usize) -> Result<Self, HarmonicsError> {
        if d < 3 {
            return Err(HarmonicsError::DimensionTooSmall(d));
        }
        Ok(Self(d))
    }

    #[inline]
    pub fn get(self) -> usize {
        self.0
    }

    #[inline]
    pub fn as_f64(self) -> f64 {
        self.0 as f64
    }

    /// Exponent `(d-3)/2` of the weight `(1 - t²)^{(d-3)/2}`.
    #[inline]
    pub fn weight_exponent(self) -> f64 {
        (self.as_f64() - 3.0) / 2.0
    }
}

impl TryFrom<usize> for SphereDim {
    type Error = HarmonicsError;
    fn try_from(d: usize) -> Result<Self, Self::Error> {
        Self::new(d)
    }
}

impl From<SphereDim> for usize {
    fn from(d: SphereDim) -> usize {
        d.0
    }
}

impl fmt::Display for SphereDim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Clamp an inner product into `[-1, 1]`.
#[inline]
pub(crate) fn clamp_unit(t: f64) -> f64 {
    t.clamp(-1.0, 1.0)
}

/// Legendre polynomial of degree `k` in dimension `d`, normalized so `P_k(1) = 1`.
///
/// Uses the forward recurrence
/// `(k + d - 2) P_{k+1}(t) = (2k + d - 2) t P_k(t) - k P_{k-1}(t)`.
pub fn legendre_p(k: usize, d: SphereDim, t: f64) -> f64 {
    let t = clamp_unit(t);
    if k == 0 {
        return 1.0;
    }
    let dd = d.as_f64();
    let (mut prev, mut cur) = (1.0, t);
    for j in 1..k {
        let j = j as f64;
        let next = ((2.0 * j + dd - 2.0) * t * cur - j * prev) / (j + dd - 2.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// All of `P_0(t), ..., P_k(t)` in one pass.
pub fn legendre_all(k: usize, d: SphereDim, t: f64) -> Vec<f64> {
    let t = clamp_unit(t);
    let dd = d.as_f64();
    let mut out = Vec::with_capacity(k + 1);
    out.push(1.0);
    if k >= 1 {
        out.push(t);
    }
    for j in 1..k {
        let jf = j as f64;
        let next = ((2.0 * jf + dd - 2.0) * t * out[j] - jf * out[j - 1]) / (jf + dd - 2.0);
        out.push(next);
    }
    out
}

fn binomial_u128(n: usize, k: usize) -> Option<u128> {
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        // c * (n - i) is divisible by (i + 1) at every step.
        c = c.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(c)
}

/// Dimension `N(d, k)` of the space of degree-`k` spherical harmonics on `S^{d-1}`.
///
/// `N(d, 0) = 1`; for `k >= 1`, `N(d, k) = ((2k + d - 2) / k) · C(k + d - 3, d - 2)`.
pub fn harmonic_dim(d: SphereDim, k: usize) -> Result<u64, HarmonicsError> {
    if k == 0 {
        return Ok(1);
    }
    let dd = d.get();
    let overflow = HarmonicsError::Overflow { d: dd, k };
    let c = binomial_u128(k + dd - 3, dd - 2).ok_or(overflow.clone())?;
    let n = c
        .checked_mul((2 * k + dd - 2) as u128)
        .ok_or(overflow.clone())?
        / k as u128;
    u64::try_from(n).map_err(|_| overflow)
}

/// `N(d, k)` as a float, computed in log space. Never overflows to an error.
pub fn harmonic_dim_f64(d: SphereDim, k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let dd = d.as_f64();
    let kf = k as f64;
    let log_binom = ln_gamma(kf + dd - 2.0) - ln_gamma(dd - 1.0) - ln_gamma(kf);
    (((2.0 * kf + dd - 2.0) / kf).ln() + log_binom).exp()
}

/// Cumulative dimension `m_k = Σ_{ℓ ≤ k} N(d, ℓ)`.
pub fn cumulative_dim(d: SphereDim, k: usize) -> Result<u64, HarmonicsError> {
    let mut total: u64 = 0;
    for l in 0..=k {
        total = total
            .checked_add(harmonic_dim(d, l)?)
            .ok_or(HarmonicsError::Overflow { d: d.get(), k })?;
    }
    Ok(total)
}

/// `ω_{d-2} / ω_{d-1} = Γ(d/2) / (√π Γ((d-1)/2))`, where `ω_{d-1}` is the
/// surface area of `S^{d-1}`.
pub fn surface_ratio(d: SphereDim) -> f64 {
    let dd = d.as_f64();
    (ln_gamma(dd / 2.0) - ln_gamma((dd - 1.0) / 2.0)).exp() / std::f64::consts::PI.sqrt()
}

/// Gauss rule for the normalized weight `(ω_{d-2}/ω_{d-1}) (1 - t²)^{(d-3)/2}` on `[-1, 1]`.
///
/// Weights already include the normalization, so they sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    d: SphereDim,
}

/// Square root of the recurrence coefficient `β_k` of the monic Gegenbauer
/// polynomials with `α = β = a`.
fn jacobi_offdiag(k: usize, a: f64) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let k = k as f64;
    let num = k * (k + 2.0 * a);
    let den = (2.0 * k + 2.0 * a + 1.0) * (2.0 * k + 2.0 * a - 1.0);
    (num / den).sqrt()
}

const NEWTON_MAX_ITER: usize = 50;
const NEWTON_TOL: f64 = 1e-14;

impl QuadratureRule {
    /// Builds an `n_nodes`-point rule, exact for polynomials of degree `2·n_nodes - 1`.
    ///
    /// Nodes come from the Golub–Welsch eigenproblem and are then polished by
    /// Newton's method on the orthonormal recurrence; weights are the
    /// reciprocal Christoffel function at the polished nodes.
    pub fn new(d: SphereDim, n_nodes: usize) -> Result<Self, HarmonicsError> {
        if n_nodes < 4 {
            return Err(HarmonicsError::TooFewNodes(n_nodes));
        }
        let a = d.weight_exponent();
        let b: Vec<f64> = (0..=n_nodes).map(|k| jacobi_offdiag(k, a)).collect();

        let jac = Mat::<f64>::from_fn(n_nodes, n_nodes, |i, j| {
            if i + 1 == j {
                b[j]
            } else if j + 1 == i {
                b[i]
            } else {
                0.0
            }
        });
        let evd = jac.selfadjoint_eigendecomposition(Side::Lower);
        let mut nodes: Vec<f64> = (0..n_nodes).map(|i| evd.s().column_vector().read(i)).collect();

        for (index, x) in nodes.iter_mut().enumerate() {
            let mut converged = false;
            for _ in 0..NEWTON_MAX_ITER {
                let (p, dp) = orthonormal_with_derivative(n_nodes, &b, *x);
                let step = p / dp;
                *x -= step;
                if step.abs() <= NEWTON_TOL {
                    converged = true;
                    break;
                }
            }
            if !converged || !x.is_finite() {
                return Err(HarmonicsError::NoConvergence {
                    index,
                    iterations: NEWTON_MAX_ITER,
                });
            }
        }
        nodes.sort_by(|x, y| x.total_cmp(y));
        // Symmetrize: the weight is even, so nodes come in ± pairs.
        for i in 0..n_nodes / 2 {
            let j = n_nodes - 1 - i;
            let avg = 0.5 * (nodes[j] - nodes[i]);
            nodes[i] = -avg;
            nodes[j] = avg;
        }
        if n_nodes % 2 == 1 {
            nodes[n_nodes / 2] = 0.0;
        }

        let weights: Vec<f64> = nodes
            .iter()
            .map(|&x| {
                let mut p_prev = 0.0;
                let mut p = 1.0;
                let mut sum = 1.0;
                for k in 0..n_nodes - 1 {
                    let next = (x * p - b[k] * p_prev) / b[k + 1];
                    p_prev = p;
                    p = next;
                    sum += p * p;
                }
                1.0 / sum
            })
            .collect();

        Ok(Self { nodes, weights, d })
    }

    /// Gauss–Legendre in the angle `θ = arccos t`, on the two panels
    /// `[0, π/2]` and `[π/2, π]` with `nodes_per_panel` points each.
    ///
    /// Not polynomial-exact in `t`, but converges geometrically for integrands
    /// that are smooth in `θ` on each panel. That covers the arc-cosine kernel
    /// profiles (kinked at `t = ±1` in `t`) and the step `1{t >= 0}`, whose jump
    /// sits on the panel boundary.
    pub fn angular(d: SphereDim, nodes_per_panel: usize) -> Result<Self, HarmonicsError> {
        let legendre = Self::new(SphereDim(3), nodes_per_panel)?;
        let norm = surface_ratio(d);
        let power = (d.get() - 2) as i32;
        let half = std::f64::consts::FRAC_PI_2;
        let mut pairs = Vec::with_capacity(2 * nodes_per_panel);
        for lo in [0.0, half] {
            for (&g, &gw) in legendre.nodes.iter().zip(&legendre.weights) {
                // Legendre weights sum to 1, so the panel length factor is `half`.
                let theta = lo + 0.5 * half * (g + 1.0);
                let w = norm * half * gw * theta.sin().powi(power);
                pairs.push((theta.cos(), w));
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (nodes, weights) = pairs.into_iter().unzip();
        Ok(Self { nodes, weights, d })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dim(&self) -> SphereDim {
        self.d
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `Σ w_i f(t_i)`, approximating `E[f(⟨x, w⟩)]` for `x` uniform on the sphere.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(t))
            .sum()
    }
}

/// Orthonormal polynomial `p_n(x)` and its derivative, from the recurrence
/// `b_{k+1} p_{k+1} = x p_k - b_k p_{k-1}`, `p_0 = 1`.
fn orthonormal_with_derivative(n: usize, b: &[f64], x: f64) -> (f64, f64) {
    let (mut p_prev, mut p) = (0.0, 1.0);
    let (mut dp_prev, mut dp) = (0.0, 0.0);
    for k in 0..n {
        let next = (x * p - b[k] * p_prev) / b[k + 1];
        let dnext = (p + x * dp - b[k] * dp_prev) / b[k + 1];
        p_prev = p;
        p = next;
        dp_prev = dp;
        dp = dnext;
    }
    (p, dp)
}

/// Convenience wrapper for [`QuadratureRule::new`].
pub fn make_quadrature(d: SphereDim, n_nodes: usize) -> Result<QuadratureRule, HarmonicsError> {
    QuadratureRule::new(d, n_nodes)
}

/// Draws `n` i.i.d. uniform points on `S^{d-1}` (rows of the result).
pub fn sample_sphere(d: SphereDim, n: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_sphere_with(d, n, &mut rng)
}

/// Same as [`sample_sphere`] but drawing from a caller-owned generator.
pub fn sample_sphere_with<R: rand::Rng + ?Sized>(d: SphereDim, n: usize, rng: &mut R) -> Array2<f64> {
    let dd = d.get();
    let mut out = Array2::<f64>::zeros((n, dd));
    for mut row in out.rows_mut() {
        loop {
            let mut norm2 = 0.0;
            for v in row.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *v = z;
                norm2 += z * z;
            }
            if norm2 > f64::MIN_POSITIVE {
                let inv = 1.0 / norm2.sqrt();
                row.mapv_inplace(|v| v * inv);
                break;
            }
        }
    }
    out
}

/// Largest deviation `| ‖x_i‖ - 1 |` over the rows of `x`.
pub fn max_norm_defect(x: &Array2<f64>) -> f64 {
    x.rows()
        .into_iter()
        .map(|r| (r.dot(&r).sqrt() - 1.0).abs())
        .fold(0.0, f64::max)
}
