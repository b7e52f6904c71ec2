//! The neural tangent kernel of the two-layer ReLU network with the augmented
//! feature: its angular profile, the population eigenvalues (closed form and
//! Funk–Hecke quadrature), and the finite-width Monte Carlo estimators that
//! approximate `K^(0)` and the band mass around the activation boundary.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::harmonics::{self, legendre_p, surface_ratio, HarmonicsError, QuadratureRule, SphereDim};

/// Inner products further than this outside `[-1, 1]` mean the inputs were not unit vectors.
pub const INNER_PRODUCT_TOLERANCE: f64 = 1e-9;

/// Default quadrature size for kernel profiles (two angular panels of 128 nodes).
pub const DEFAULT_PANEL_NODES: usize = 128;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NtkError {
    #[error("inner product {0} is outside [-1, 1] beyond tolerance; inputs are not unit vectors")]
    NotUnit(f64),
    #[error("dimension mismatch: weights have {weights} columns, probe has {probe}")]
    DimensionMismatch { weights: usize, probe: usize },
    #[error(transparent)]
    Harmonics(#[from] HarmonicsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelProfile {
    /// `K^(0)(t) = (π - arccos t) / (2π)`.
    K0,
    /// `K^(1)(t) = t · K^(0)(t)`.
    K1,
    /// `K = K^(0) + K^(1)`.
    K,
    /// `1{t >= 0}`.
    Step,
}

impl KernelProfile {
    /// Evaluates the profile at `t`, clamping into `[-1, 1]` first.
    #[inline]
    pub fn eval(self, t: f64) -> f64 {
        let t = t.clamp(-1.0, 1.0);
        match self {
            KernelProfile::K0 => k0(t),
            KernelProfile::K1 => t * k0(t),
            KernelProfile::K => k0(t) * (1.0 + t),
            KernelProfile::Step => {
                if t >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[inline]
fn k0(t: f64) -> f64 {
    (PI - t.acos()) / (2.0 * PI)
}

/// Checks that an inner product is within tolerance of `[-1, 1]` and clamps it.
#[inline]
pub fn clamp_inner(t: f64) -> Result<f64, NtkError> {
    if !(t.abs() <= 1.0 + INNER_PRODUCT_TOLERANCE) {
        return Err(NtkError::NotUnit(t));
    }
    Ok(t.clamp(-1.0, 1.0))
}

pub fn kernel_value(profile: KernelProfile, t: f64) -> Result<f64, NtkError> {
    Ok(profile.eval(clamp_inner(t)?))
}

/// Funk–Hecke coefficient `(ω_{d-2}/ω_{d-1}) ∫ κ(t) P_ℓ(t) (1 - t²)^{(d-3)/2} dt`.
pub fn eigenvalue_quadrature(profile: KernelProfile, degree: usize, rule: &QuadratureRule) -> f64 {
    let d = rule.dim();
    rule.integrate(|t| profile.eval(t) * legendre_p(degree, d, t))
}

/// Funk–Hecke coefficient `s_k` of the step profile, from its closed form.
///
/// `s_0 = 1/2`, `s_{2t} = 0` for `t >= 1`, and
/// `s_{2t-1} = ρ_d (1/2)^{2t-1} (-1)^{t-1} Γ((d-1)/2) Γ(2t-1) / (Γ(t) Γ(t + (d-1)/2))`
/// with `ρ_d = ω_{d-2}/ω_{d-1}`.
pub fn s_closed_form(k: usize, d: SphereDim) -> f64 {
    if k == 0 {
        return 0.5;
    }
    if k % 2 == 0 {
        return 0.0;
    }
    let t = ((k + 1) / 2) as f64;
    let half_d = (d.as_f64() - 1.0) / 2.0;
    let log_mag = (2.0 * t - 1.0) * 0.5f64.ln() + ln_gamma(half_d) + ln_gamma(2.0 * t - 1.0)
        - ln_gamma(t)
        - ln_gamma(t + half_d);
    let sign = if (k + 1) / 2 % 2 == 1 { 1.0 } else { -1.0 };
    sign * surface_ratio(d) * log_mag.exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumMethod {
    ClosedForm,
    Quadrature,
}

/// Per-degree population eigenvalues of the NTK integral operator on `S^{d-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpectrum {
    pub d: SphereDim,
    pub max_degree: usize,
    /// `μ_ℓ = λ_{0,ℓ} + λ_{1,ℓ}`, the eigenvalue of `K` on the degree-`ℓ` harmonics.
    pub mu: Vec<f64>,
    pub lambda0: Vec<f64>,
    pub lambda1: Vec<f64>,
    pub method: SpectrumMethod,
}

impl KernelSpectrum {
    pub fn mu(&self, degree: usize) -> Option<f64> {
        self.mu.get(degree).copied()
    }

    /// Eigenvalues with multiplicity: each `μ_ℓ` repeated `N(d, ℓ)` times, truncated to `len`.
    ///
    /// Returns fewer than `len` values if the spectrum runs out of degrees.
    pub fn extended(&self, len: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(len);
        for (l, &mu) in self.mu.iter().enumerate() {
            let mult = harmonics::harmonic_dim(self.d, l).unwrap_or(u64::MAX);
            for _ in 0..mult {
                if out.len() == len {
                    return out;
                }
                out.push(mu);
            }
        }
        out
    }
}

pub fn spectrum_closed_form(d: SphereDim, max_degree: usize) -> KernelSpectrum {
    let lambda0: Vec<f64> = (0..=max_degree + 1)
        .map(|k| s_closed_form(k, d).powi(2))
        .collect();
    let dd = d.as_f64();
    let lambda1: Vec<f64> = (0..=max_degree)
        .map(|k| {
            if k == 0 {
                lambda0[1]
            } else {
                let kf = k as f64;
                let den = 2.0 * kf + dd - 2.0;
                kf / den * lambda0[k - 1] + (kf + dd - 2.0) / den * lambda0[k + 1]
            }
        })
        .collect();
    let mut lambda0 = lambda0;
    lambda0.truncate(max_degree + 1);
    let mu = lambda0.iter().zip(&lambda1).map(|(a, b)| a + b).collect();
    KernelSpectrum {
        d,
        max_degree,
        mu,
        lambda0,
        lambda1,
        method: SpectrumMethod::ClosedForm,
    }
}

pub fn spectrum_quadrature(d: SphereDim, max_degree: usize, rule: &QuadratureRule) -> KernelSpectrum {
    assert_eq!(rule.dim(), d, "quadrature rule built for another dimension");
    let per_degree = |profile| -> Vec<f64> {
        (0..=max_degree)
            .map(|l| eigenvalue_quadrature(profile, l, rule))
            .collect()
    };
    KernelSpectrum {
        d,
        max_degree,
        mu: per_degree(KernelProfile::K),
        lambda0: per_degree(KernelProfile::K0),
        lambda1: per_degree(KernelProfile::K1),
        method: SpectrumMethod::Quadrature,
    }
}

/// [`spectrum_quadrature`] with the default angular rule.
pub fn spectrum_quadrature_default(d: SphereDim, max_degree: usize) -> Result<KernelSpectrum, NtkError> {
    let rule = QuadratureRule::angular(d, DEFAULT_PANEL_NODES)?;
    Ok(spectrum_quadrature(d, max_degree, &rule))
}

/// `ĥ(W, u, v) = (1/m) Σ_r 1{w_r·u >= 0} 1{w_r·v >= 0}`.
pub fn finite_width_kernel_estimate(
    w: ArrayView2<'_, f64>,
    u: ArrayView1<'_, f64>,
    v: ArrayView1<'_, f64>,
) -> Result<f64, NtkError> {
    check_cols(w, u)?;
    check_cols(w, v)?;
    let m = w.nrows();
    if m == 0 {
        return Ok(0.0);
    }
    let hits = w
        .rows()
        .into_iter()
        .filter(|row| row.dot(&u) >= 0.0 && row.dot(&v) >= 0.0)
        .count();
    Ok(hits as f64 / m as f64)
}

/// `v̂_R(W, u) = (1/m) Σ_r 1{|w_r·u| <= R}`.
pub fn finite_width_band_estimate(
    w: ArrayView2<'_, f64>,
    u: ArrayView1<'_, f64>,
    radius: f64,
) -> Result<f64, NtkError> {
    check_cols(w, u)?;
    let m = w.nrows();
    if m == 0 {
        return Ok(0.0);
    }
    let hits = w
        .rows()
        .into_iter()
        .filter(|row| row.dot(&u).abs() <= radius)
        .count();
    Ok(hits as f64 / m as f64)
}

fn check_cols(w: ArrayView2<'_, f64>, u: ArrayView1<'_, f64>) -> Result<(), NtkError> {
    if w.ncols() != u.len() {
        return Err(NtkError::DimensionMismatch {
            weights: w.ncols(),
            probe: u.len(),
        });
    }
    Ok(())
}

/// Small-`R` limit `2R / (√(2π) κ)` of the band mass `P(|w·u| <= R)`, `w ~ N(0, κ² I)`.
pub fn band_reference(radius: f64, kappa: f64) -> f64 {
    2.0 * radius / ((2.0 * PI).sqrt() * kappa)
}

/// Exact band mass `P(|N(0, κ²)| <= R) = erf(R / (κ√2))`.
pub fn band_exact(radius: f64, kappa: f64) -> f64 {
    statrs::function::erf::erf(radius / (kappa * std::f64::consts::SQRT_2))
}

/// Sup-norm deviation of a finite-width estimate over a probe set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WidthEstimate {
    pub m: usize,
    pub sup_error: f64,
    pub probe_count: usize,
}

/// Activation patterns `1{w_r·u_j >= 0}` of every probe, packed 64 neurons per word.
fn activation_bits(w: ArrayView2<'_, f64>, probes: ArrayView2<'_, f64>) -> Vec<Vec<u64>> {
    let m = w.nrows();
    let words = m.div_ceil(64);
    let pre = w.dot(&probes.t());
    (0..probes.nrows())
        .map(|j| {
            let mut bits = vec![0u64; words];
            for r in 0..m {
                if pre[[r, j]] >= 0.0 {
                    bits[r / 64] |= 1 << (r % 64);
                }
            }
            bits
        })
        .collect()
}

/// `sup_{i,j} |ĥ(W, u_i, u_j) - K^(0)(u_i, u_j)|` over all ordered pairs of probe rows.
pub fn kernel_sup_error(w: ArrayView2<'_, f64>, probes: ArrayView2<'_, f64>) -> Result<WidthEstimate, NtkError> {
    if w.ncols() != probes.ncols() {
        return Err(NtkError::DimensionMismatch {
            weights: w.ncols(),
            probe: probes.ncols(),
        });
    }
    let m = w.nrows();
    let bits = activation_bits(w, probes);
    let p = probes.nrows();
    let mut sup: f64 = 0.0;
    for i in 0..p {
        for j in i..p {
            let both: u32 = bits[i]
                .iter()
                .zip(&bits[j])
                .map(|(a, b)| (a & b).count_ones())
                .sum();
            let h = both as f64 / m as f64;
            let t = clamp_inner(probes.row(i).dot(&probes.row(j)))?;
            sup = sup.max((h - KernelProfile::K0.eval(t)).abs());
        }
    }
    Ok(WidthEstimate {
        m,
        sup_error: sup,
        probe_count: p,
    })
}

/// `sup_j |v̂_R(W, u_j) - reference|` over probe rows.
pub fn band_sup_error(
    w: ArrayView2<'_, f64>,
    probes: ArrayView2<'_, f64>,
    radius: f64,
    reference: f64,
) -> Result<WidthEstimate, NtkError> {
    let mut sup: f64 = 0.0;
    for u in probes.rows() {
        let v = finite_width_band_estimate(w, u, radius)?;
        sup = sup.max((v - reference).abs());
    }
    Ok(WidthEstimate {
        m: w.nrows(),
        sup_error: sup,
        probe_count: probes.nrows(),
    })
}

/// Gaussian weight matrix with i.i.d. `N(0, κ²)` entries.
pub fn gaussian_weights<R: rand::Rng + ?Sized>(m: usize, d: usize, kappa: f64, rng: &mut R) -> Array2<f64> {
    use rand_distr::{Distribution, StandardNormal};
    Array2::from_shape_simple_fn((m, d), || {
        let z: f64 = StandardNormal.sample(rng);
        kappa * z
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dim(d: usize) -> SphereDim {
        SphereDim::new(d).unwrap()
    }

    #[test]
    fn profile_values() {
        assert_abs_diff_eq!(kernel_value(KernelProfile::K, 1.0).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(kernel_value(KernelProfile::K, -1.0).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(kernel_value(KernelProfile::K, 0.0).unwrap(), 0.25, epsilon = 1e-15);
        assert_eq!(kernel_value(KernelProfile::Step, 0.0).unwrap(), 1.0);
        assert_eq!(kernel_value(KernelProfile::Step, -1e-300).unwrap(), 0.0);
    }

    #[test]
    fn inner_product_tolerance() {
        assert_eq!(kernel_value(KernelProfile::K, 1.0 + 5e-10).unwrap(), 1.0);
        assert!(matches!(
            kernel_value(KernelProfile::K0, 1.0 + 1e-6),
            Err(NtkError::NotUnit(_))
        ));
        assert!(kernel_value(KernelProfile::K0, f64::NAN).is_err());
    }

    #[test]
    fn profiles_map_into_unit_interval() {
        for i in 0..=200 {
            let t = -1.0 + 0.01 * i as f64;
            for p in [KernelProfile::K0, KernelProfile::K, KernelProfile::Step] {
                let v = p.eval(t);
                assert!((0.0..=1.0).contains(&v));
            }
            assert_abs_diff_eq!(
                KernelProfile::K.eval(t),
                KernelProfile::K0.eval(t) + KernelProfile::K1.eval(t),
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn step_coefficients_by_quadrature() {
        let rule5 = QuadratureRule::angular(dim(5), DEFAULT_PANEL_NODES).unwrap();
        assert_abs_diff_eq!(eigenvalue_quadrature(KernelProfile::Step, 0, &rule5), 0.5, epsilon = 1e-10);
        let rule7 = QuadratureRule::angular(dim(7), DEFAULT_PANEL_NODES).unwrap();
        assert_abs_diff_eq!(eigenvalue_quadrature(KernelProfile::Step, 2, &rule7), 0.0, epsilon = 1e-8);
        let rule3 = QuadratureRule::angular(dim(3), DEFAULT_PANEL_NODES).unwrap();
        assert_abs_diff_eq!(eigenvalue_quadrature(KernelProfile::Step, 1, &rule3), 0.25, epsilon = 1e-10);
    }

    #[test]
    fn step_closed_form() {
        assert_eq!(s_closed_form(0, dim(9)), 0.5);
        assert_eq!(s_closed_form(4, dim(6)), 0.0);
        assert_abs_diff_eq!(s_closed_form(1, dim(3)), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn step_closed_form_matches_quadrature() {
        for d in [3, 4, 7, 15] {
            let rule = QuadratureRule::angular(dim(d), DEFAULT_PANEL_NODES).unwrap();
            for k in 0..=9 {
                let q = eigenvalue_quadrature(KernelProfile::Step, k, &rule);
                assert_abs_diff_eq!(s_closed_form(k, dim(d)), q, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn closed_form_hand_values() {
        let s = spectrum_closed_form(dim(3), 4);
        assert_abs_diff_eq!(s.mu[0], 5.0 / 16.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.mu[1], 7.0 / 48.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.lambda0[1], 1.0 / 16.0, epsilon = 1e-15);
        assert_eq!(s.lambda0[2], 0.0);
        assert_eq!(s.lambda0[4], 0.0);
        for (mu, (a, b)) in s.mu.iter().zip(s.lambda0.iter().zip(&s.lambda1)) {
            assert_abs_diff_eq!(*mu, a + b, epsilon = 1e-15);
        }
    }

    #[test]
    fn quadrature_hand_value_and_agreement() {
        let q = spectrum_quadrature_default(dim(3), 6).unwrap();
        assert_abs_diff_eq!(q.mu[0], 0.3125, epsilon = 1e-8);
        for d in [3, 5, 10, 20] {
            let c = spectrum_closed_form(dim(d), 6);
            let q = spectrum_quadrature_default(dim(d), 6).unwrap();
            for l in 0..=6 {
                assert_relative_eq!(c.mu[l], q.mu[l], max_relative = 1e-6);
                if l >= 2 && l % 2 == 0 {
                    assert!(q.lambda0[l].abs() <= 1e-8);
                }
            }
        }
    }

    #[test]
    fn eigenvalues_positive_and_decreasing() {
        for d in [3, 4, 5, 6, 10, 20, 40] {
            let s = spectrum_closed_form(dim(d), 8);
            assert!(s.mu.iter().all(|&m| m > 0.0), "d = {d}");
            assert!(s.mu.windows(2).all(|w| w[0] > w[1]), "d = {d}: {:?}", s.mu);
        }
    }

    #[test]
    fn vanilla_kernel_misses_odd_degrees() {
        // Without the augmented feature the NTK is K^(1) alone, whose odd
        // eigenvalues of degree >= 3 vanish.
        let s = spectrum_closed_form(dim(6), 7);
        for k in [3, 5, 7] {
            assert!(s.lambda1[k].abs() < 1e-16);
        }
    }

    #[test]
    fn decay_rate_in_dimension() {
        for k in 1..=3 {
            let scaled: Vec<f64> = [10, 20, 40]
                .iter()
                .map(|&d| spectrum_closed_form(dim(d), 3).mu[k] * (d as f64).powi(k as i32))
                .collect();
            let max = scaled.iter().cloned().fold(f64::MIN, f64::max);
            let min = scaled.iter().cloned().fold(f64::MAX, f64::min);
            assert!(max / min < 4.0);
        }
    }

    #[test]
    fn extended_enumeration() {
        let s = spectrum_closed_form(dim(3), 3);
        let e = s.extended(9);
        assert_eq!(e.len(), 9);
        assert_eq!(e[0], s.mu[0]);
        assert!(e[1..4].iter().all(|&v| v == s.mu[1]));
        assert!(e[4..9].iter().all(|&v| v == s.mu[2]));
        assert_eq!(s.extended(1000).len(), 1 + 3 + 5 + 7);
    }

    #[test]
    fn kernel_estimate_examples() {
        let w = array![[1.0, -1.0, 0.0]];
        let u = array![1.0, 0.0, 0.0];
        let v = array![0.0, 1.0, 0.0];
        assert_eq!(finite_width_kernel_estimate(w.view(), u.view(), v.view()).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = gaussian_weights(512, 3, 1.0, &mut rng);
        let h = finite_width_kernel_estimate(w.view(), u.view(), u.view()).unwrap();
        assert!((0.0..=1.0).contains(&h));
        assert!((h - 0.5).abs() < 0.1);
        let bad = array![1.0, 0.0];
        assert!(finite_width_kernel_estimate(w.view(), bad.view(), bad.view()).is_err());
    }

    #[test]
    fn band_estimate_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let kappa = 0.7;
        let w = gaussian_weights(4096, 4, kappa, &mut rng);
        let u = array![0.5, 0.5, 0.5, 0.5];
        assert_eq!(finite_width_band_estimate(w.view(), u.view(), 0.0).unwrap(), 0.0);
        assert!(finite_width_band_estimate(w.view(), u.view(), 10.0 * kappa).unwrap() >= 0.99);
    }

    #[test]
    fn band_estimate_mean_matches_small_radius_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let kappa = 1.0;
        let m = 65536;
        let w = gaussian_weights(m, 5, kappa, &mut rng);
        let probes = harmonics::sample_sphere_with(dim(5), 20, &mut rng);
        let radius = 0.05 * kappa;
        let mean: f64 = probes
            .rows()
            .into_iter()
            .map(|u| finite_width_band_estimate(w.view(), u, radius).unwrap())
            .sum::<f64>()
            / probes.nrows() as f64;
        assert!((mean - band_reference(radius, kappa)).abs() <= 3.0 / (m as f64).sqrt());
    }

    #[test]
    fn packed_sup_error_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = gaussian_weights(200, 4, 1.0, &mut rng);
        let probes = harmonics::sample_sphere_with(dim(4), 6, &mut rng);
        let est = kernel_sup_error(w.view(), probes.view()).unwrap();
        let mut direct: f64 = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                let h = finite_width_kernel_estimate(w.view(), probes.row(i), probes.row(j)).unwrap();
                let k = KernelProfile::K0.eval(probes.row(i).dot(&probes.row(j)));
                direct = direct.max((h - k).abs());
            }
        }
        assert_abs_diff_eq!(est.sup_error, direct, epsilon = 1e-15);
        assert_eq!(est.m, 200);
        assert_eq!(est.probe_count, 6);
    }
}
