//! Ground-truth spherical polynomials built from zonal components, and
//! noisy training sets drawn from them.
//!
//! A component `c √N(d,ℓ) P_ℓ(⟨x, w⟩)` lies in the degree-`ℓ` harmonic space
//! and has `E[(√N P_ℓ(⟨x,w⟩))²] = 1`, so a single-pole degree contributes
//! exactly `c²` of L² energy and `c²/μ_ℓ` of squared RKHS norm.

use ndarray::{Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harmonics::{self, harmonic_dim_f64, legendre_p, SphereDim};
use crate::ntk::KernelSpectrum;
use crate::spectral::{check_on_sphere, SpectralError};

/// Relative slack when comparing a norm against its budget, so targets built
/// exactly on the boundary are accepted.
const BUDGET_SLACK: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TargetError {
    #[error("squared RKHS norm {norm_sq} exceeds budget gamma0^2 = {budget_sq}")]
    NormBudgetExceeded { norm_sq: f64, budget_sq: f64 },
    #[error("the top degree k0 = {0} needs a positive coefficient")]
    MissingTopDegree(usize),
    #[error("expected {expected} per-degree coefficients (degrees 0..=k0), got {got}")]
    CoefficientCount { expected: usize, got: usize },
    #[error("coefficient for degree {degree} is negative or not finite: {value}")]
    BadCoefficient { degree: usize, value: f64 },
    #[error("spectrum covers degrees up to {have}, need {need}")]
    SpectrumTooShort { have: usize, need: usize },
    #[error("spectrum is for d = {spectrum}, target for d = {target}")]
    DimensionMismatch { spectrum: usize, target: usize },
    #[error("noise scale must be finite and nonnegative, got {0}")]
    BadNoise(f64),
    #[error(transparent)]
    Features(#[from] SpectralError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZonalComponent {
    pub degree: usize,
    pub pole: Vec<f64>,
    pub coeff: f64,
}

/// `f*(x) = Σ c √N(d,ℓ) P_ℓ(⟨x, w⟩)` over its components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZonalTarget {
    pub d: SphereDim,
    pub k0: usize,
    pub components: Vec<ZonalComponent>,
    /// `μ_0, ..., μ_{k0}` used for the norm accounting.
    pub mu: Vec<f64>,
    pub gamma0: f64,
    degree_energy: Vec<f64>,
}

impl ZonalTarget {
    /// L² energy `E[f_ℓ²]` of the degree-`ℓ` part (zero for absent degrees).
    pub fn degree_energy(&self, degree: usize) -> f64 {
        self.degree_energy.get(degree).copied().unwrap_or(0.0)
    }

    pub fn degree_energies(&self) -> &[f64] {
        &self.degree_energy
    }

    /// `E_P[f*²] = Σ_ℓ energy_ℓ`.
    pub fn l2_norm_sq(&self) -> f64 {
        self.degree_energy.iter().sum()
    }

    /// `Σ_ℓ energy_ℓ / μ_ℓ`.
    pub fn rkhs_norm_sq(&self) -> f64 {
        self.degree_energy
            .iter()
            .zip(&self.mu)
            .map(|(e, m)| e / m)
            .sum()
    }

    /// `Σ |c| √N(d,ℓ)`, an upper bound on `|f*(x)|`.
    pub fn sup_bound(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.coeff.abs() * harmonic_dim_f64(self.d, c.degree).sqrt())
            .sum()
    }

    /// Target at one point, no sphere check.
    pub fn value_at(&self, x: &[f64]) -> f64 {
        self.components
            .iter()
            .map(|c| {
                let t: f64 = x.iter().zip(&c.pole).map(|(a, b)| a * b).sum();
                c.coeff * harmonic_dim_f64(self.d, c.degree).sqrt() * legendre_p(c.degree, self.d, t)
            })
            .sum()
    }

    /// A target made of the given subset of components (same poles and bookkeeping source).
    pub fn restricted_to(&self, keep: impl Fn(&ZonalComponent) -> bool) -> ZonalTarget {
        let components: Vec<ZonalComponent> = self.components.iter().filter(|c| keep(c)).cloned().collect();
        let degree_energy = degree_energies(self.d, self.k0, &components);
        ZonalTarget {
            components,
            degree_energy,
            ..self.clone()
        }
    }
}

fn degree_energies(d: SphereDim, k0: usize, components: &[ZonalComponent]) -> Vec<f64> {
    // Two poles of one degree interact through E[√N P(⟨x,a⟩) √N P(⟨x,b⟩)] = P(⟨a,b⟩).
    let mut energy = vec![0.0; k0 + 1];
    for a in components {
        for b in components.iter().filter(|b| b.degree == a.degree) {
            let t: f64 = a.pole.iter().zip(&b.pole).map(|(x, y)| x * y).sum();
            energy[a.degree] += a.coeff * b.coeff * legendre_p(a.degree, d, t);
        }
    }
    energy
}

fn spectrum_prefix(spectrum: &KernelSpectrum, d: SphereDim, k0: usize) -> Result<Vec<f64>, TargetError> {
    if spectrum.d != d {
        return Err(TargetError::DimensionMismatch {
            spectrum: spectrum.d.get(),
            target: d.get(),
        });
    }
    if spectrum.mu.len() < k0 + 1 {
        return Err(TargetError::SpectrumTooShort {
            have: spectrum.mu.len().saturating_sub(1),
            need: k0,
        });
    }
    Ok(spectrum.mu[..=k0].to_vec())
}

/// One pole per degree with `c_ℓ = coefficients[ℓ]`; degrees with `c_ℓ = 0` get no component.
pub fn make_zonal_target(
    d: SphereDim,
    k0: usize,
    coefficients: &[f64],
    gamma0: f64,
    spectrum: &KernelSpectrum,
    pole_seed: u64,
) -> Result<ZonalTarget, TargetError> {
    let per_degree: Vec<Vec<f64>> = coefficients
        .iter()
        .map(|&c| if c == 0.0 { Vec::new() } else { vec![c] })
        .collect();
    make_multi_pole_target(d, k0, &per_degree, gamma0, spectrum, pole_seed)
}

/// Several poles per degree: `per_degree[ℓ]` lists the coefficients of the
/// degree-`ℓ` components. Energies come from the pole Gram matrix.
pub fn make_multi_pole_target(
    d: SphereDim,
    k0: usize,
    per_degree: &[Vec<f64>],
    gamma0: f64,
    spectrum: &KernelSpectrum,
    pole_seed: u64,
) -> Result<ZonalTarget, TargetError> {
    if per_degree.len() != k0 + 1 {
        return Err(TargetError::CoefficientCount {
            expected: k0 + 1,
            got: per_degree.len(),
        });
    }
    for (degree, coeffs) in per_degree.iter().enumerate() {
        if let Some(&value) = coeffs.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
            return Err(TargetError::BadCoefficient { degree, value });
        }
    }
    if !per_degree[k0].iter().any(|&c| c > 0.0) {
        return Err(TargetError::MissingTopDegree(k0));
    }
    let mu = spectrum_prefix(spectrum, d, k0)?;

    let mut rng = ChaCha8Rng::seed_from_u64(pole_seed);
    let mut components = Vec::new();
    for (degree, coeffs) in per_degree.iter().enumerate() {
        for &coeff in coeffs.iter().filter(|&&c| c != 0.0) {
            let pole = harmonics::sample_sphere_with(d, 1, &mut rng);
            components.push(ZonalComponent {
                degree,
                pole: pole.row(0).to_vec(),
                coeff,
            });
        }
    }
    let degree_energy = degree_energies(d, k0, &components);
    let target = ZonalTarget {
        d,
        k0,
        components,
        mu,
        gamma0,
        degree_energy,
    };
    let norm_sq = target.rkhs_norm_sq();
    let budget_sq = gamma0 * gamma0;
    if norm_sq > budget_sq * (1.0 + BUDGET_SLACK) {
        return Err(TargetError::NormBudgetExceeded { norm_sq, budget_sq });
    }
    Ok(target)
}

/// Serialized target description `{"k0", "energies", "gamma0", "pole_seed"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub k0: usize,
    /// `c_ℓ` for `ℓ = 0..=k0`.
    pub energies: Vec<f64>,
    pub gamma0: f64,
    pub pole_seed: u64,
}

impl TargetSpec {
    pub fn build(&self, d: SphereDim, spectrum: &KernelSpectrum) -> Result<ZonalTarget, TargetError> {
        make_zonal_target(d, self.k0, &self.energies, self.gamma0, spectrum, self.pole_seed)
    }
}

/// Evaluates the target on every row of `x`.
pub fn evaluate_target(target: &ZonalTarget, x: ArrayView2<'_, f64>) -> Result<Array1<f64>, TargetError> {
    check_on_sphere(x)?;
    Ok(evaluate_unchecked(target, x))
}

pub(crate) fn evaluate_unchecked(target: &ZonalTarget, x: ArrayView2<'_, f64>) -> Array1<f64> {
    let mut out = Array1::<f64>::zeros(x.nrows());
    for c in &target.components {
        let pole = Array1::from(c.pole.clone());
        let scale = c.coeff * harmonic_dim_f64(target.d, c.degree).sqrt();
        let t = x.dot(&pole);
        for (o, ti) in out.iter_mut().zip(t.iter()) {
            *o += scale * legendre_p(c.degree, target.d, *ti);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub features: Array2<f64>,
    pub y: Array1<f64>,
    pub f_star: Array1<f64>,
    pub sigma0: f64,
    pub feature_seed: u64,
    pub noise_seed: u64,
}

impl TrainingSet {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn noise(&self) -> Array1<f64> {
        &self.y - &self.f_star
    }
}

/// Uniform features from `feature_seed`, Gaussian `N(0, σ0²)` noise from `noise_seed`.
pub fn make_training_set(
    target: &ZonalTarget,
    n: usize,
    sigma0: f64,
    feature_seed: u64,
    noise_seed: u64,
) -> Result<TrainingSet, TargetError> {
    if !(sigma0.is_finite() && sigma0 >= 0.0) {
        return Err(TargetError::BadNoise(sigma0));
    }
    let features = harmonics::sample_sphere(target.d, n, feature_seed);
    let f_star = evaluate_unchecked(target, features.view());
    let mut y = f_star.clone();
    if sigma0 > 0.0 {
        let normal = Normal::new(0.0, sigma0).map_err(|_| TargetError::BadNoise(sigma0))?;
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        for v in y.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(TrainingSet {
        features,
        y,
        f_star,
        sigma0,
        feature_seed,
        noise_seed,
    })
}

/// Per-degree amplitude condition `energy_ℓ >= β0² μ_ℓ` for every degree `ℓ <= k0`.
///
/// This is a degree-level surrogate for the per-coefficient condition
/// `|a_{ℓj}| / √μ_ℓ >= β0`, which zonal targets cannot satisfy coefficient by coefficient.
pub fn degree_energy_condition(target: &ZonalTarget, beta0: f64) -> bool {
    let floor = beta0 * beta0;
    (0..=target.k0).all(|l| target.degree_energy(l) >= floor * target.mu[l] * (1.0 - BUDGET_SLACK))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ntk::spectrum_closed_form;
    use approx::assert_abs_diff_eq;
    use ndarray::Axis;

    fn dim(d: usize) -> SphereDim {
        SphereDim::new(d).unwrap()
    }

    #[test]
    fn boundary_target_has_budget_norm() {
        let d = dim(6);
        let spec = spectrum_closed_form(d, 4);
        let gamma0 = 1.7;
        let c = gamma0 * spec.mu[2].sqrt();
        let t = make_zonal_target(d, 2, &[0.0, 0.0, c], gamma0, &spec, 1).unwrap();
        assert_abs_diff_eq!(t.rkhs_norm_sq().sqrt(), gamma0, epsilon = 1e-12);
        assert_eq!(t.components.len(), 1);
    }

    #[test]
    fn budget_and_shape_errors() {
        let d = dim(5);
        let spec = spectrum_closed_form(d, 3);
        assert!(matches!(
            make_zonal_target(d, 1, &[0.0, 1.0], 1.0, &spec, 0),
            Err(TargetError::NormBudgetExceeded { .. })
        ));
        assert_eq!(
            make_zonal_target(d, 1, &[0.1, 0.0], 10.0, &spec, 0),
            Err(TargetError::MissingTopDegree(1))
        );
        assert!(matches!(
            make_zonal_target(d, 2, &[0.1, 0.1], 10.0, &spec, 0),
            Err(TargetError::CoefficientCount { expected: 3, got: 2 })
        ));
        assert!(matches!(
            make_zonal_target(d, 5, &[0.1; 6], 10.0, &spec, 0),
            Err(TargetError::SpectrumTooShort { .. })
        ));
        assert!(matches!(
            make_zonal_target(d, 1, &[-0.1, 0.1], 10.0, &spec, 0),
            Err(TargetError::BadCoefficient { degree: 0, .. })
        ));
    }

    #[test]
    fn constant_target() {
        let d = dim(4);
        let spec = spectrum_closed_form(d, 2);
        let t = make_zonal_target(d, 0, &[0.3], 1.0, &spec, 5).unwrap();
        let x = harmonics::sample_sphere(d, 20, 2);
        for v in evaluate_target(&t, x.view()).unwrap() {
            assert_abs_diff_eq!(v, 0.3, epsilon = 1e-15);
        }
    }

    #[test]
    fn evaluation_at_pole_and_equator() {
        let d = dim(7);
        let spec = spectrum_closed_form(d, 3);
        let t = make_zonal_target(d, 1, &[0.0, 0.2], 5.0, &spec, 8).unwrap();
        let pole = Array2::from_shape_vec((1, 7), t.components[0].pole.clone()).unwrap();
        let at_pole = evaluate_target(&t, pole.view()).unwrap()[0];
        assert_abs_diff_eq!(at_pole, 0.2 * 7f64.sqrt(), epsilon = 1e-14);

        // Gram–Schmidt a random point against the pole.
        let w = Array1::from(t.components[0].pole.clone());
        let mut x = harmonics::sample_sphere(d, 1, 3).row(0).to_owned();
        x = &x - &(&w * x.dot(&w));
        x /= x.dot(&x).sqrt();
        let x = x.insert_axis(Axis(0));
        assert_abs_diff_eq!(evaluate_target(&t, x.view()).unwrap()[0], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn components_add_linearly() {
        let d = dim(5);
        let spec = spectrum_closed_form(d, 3);
        let t = make_zonal_target(d, 2, &[0.0, 0.1, 0.05], 10.0, &spec, 4).unwrap();
        let only1 = t.restricted_to(|c| c.degree == 1);
        let only2 = t.restricted_to(|c| c.degree == 2);
        let x = harmonics::sample_sphere(d, 30, 6);
        let sum = evaluate_target(&only1, x.view()).unwrap() + evaluate_target(&only2, x.view()).unwrap();
        let both = evaluate_target(&t, x.view()).unwrap();
        for (a, b) in sum.iter().zip(both.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
        assert!(both.iter().all(|v| v.abs() <= t.sup_bound()));
    }

    #[test]
    fn rejects_off_sphere_points() {
        let d = dim(3);
        let spec = spectrum_closed_form(d, 2);
        let t = make_zonal_target(d, 1, &[0.1, 0.1], 10.0, &spec, 4).unwrap();
        let x = ndarray::array![[1.0, 1.0, 0.0]];
        assert!(matches!(
            evaluate_target(&t, x.view()),
            Err(TargetError::Features(SpectralError::NotOnSphere { .. }))
        ));
    }

    #[test]
    fn multi_pole_energy_uses_pole_gram() {
        let d = dim(4);
        let spec = spectrum_closed_form(d, 2);
        let t = make_multi_pole_target(d, 1, &[vec![], vec![0.1, 0.2]], 10.0, &spec, 12).unwrap();
        let (a, b) = (&t.components[0], &t.components[1]);
        let cos: f64 = a.pole.iter().zip(&b.pole).map(|(x, y)| x * y).sum();
        let expected = 0.01 + 0.04 + 2.0 * 0.02 * cos;
        assert_abs_diff_eq!(t.degree_energy(1), expected, epsilon = 1e-15);
    }

    #[test]
    fn training_set_noise_and_determinism() {
        let d = dim(5);
        let spec = spectrum_closed_form(d, 2);
        let t = make_zonal_target(d, 1, &[0.2, 0.1], 10.0, &spec, 4).unwrap();

        let clean = make_training_set(&t, 50, 0.0, 1, 2).unwrap();
        assert_eq!(clean.y, clean.f_star);

        let a = make_training_set(&t, 10_000, 0.3, 1, 2).unwrap();
        let b = make_training_set(&t, 10_000, 0.3, 1, 2).unwrap();
        assert_eq!(a, b);
        let noise = a.noise();
        let var = noise.mapv(|v| v * v).mean().unwrap();
        assert!((var / 0.09 - 1.0).abs() < 0.15);
        let mean = noise.mean().unwrap();
        assert!(mean.abs() <= 4.0 * 0.3 / 100.0);

        // The noise stream does not move the features.
        let c = make_training_set(&t, 10_000, 0.3, 1, 99).unwrap();
        assert_eq!(a.features, c.features);
        assert_eq!(a.f_star, c.f_star);
        assert!(make_training_set(&t, 5, -1.0, 1, 2).is_err());
    }

    #[test]
    fn energy_condition() {
        let d = dim(6);
        let spec = spectrum_closed_form(d, 4);
        let beta0 = 0.8;
        let at_floor: Vec<f64> = (0..=2).map(|l| beta0 * spec.mu[l].sqrt()).collect();
        let t = make_zonal_target(d, 2, &at_floor, 10.0, &spec, 1).unwrap();
        assert!(degree_energy_condition(&t, beta0));
        assert!(degree_energy_condition(&t, 0.0));

        let mut weak = at_floor.clone();
        weak[2] *= 0.5;
        let t = make_zonal_target(d, 2, &weak, 10.0, &spec, 1).unwrap();
        assert!(!degree_energy_condition(&t, beta0));
    }

    #[test]
    fn monte_carlo_energy_and_orthogonality() {
        let d = dim(5);
        let spec = spectrum_closed_form(d, 3);
        let t = make_zonal_target(d, 2, &[0.3, 0.2, 0.1], 10.0, &spec, 2).unwrap();
        let n_mc = 100_000;
        let x = harmonics::sample_sphere(d, n_mc, 77);
        let f = evaluate_target(&t, x.view()).unwrap();
        let second = f.mapv(|v| v * v).mean().unwrap();
        // Each unit-energy component has E[(√N P)^4] <= N, so the SE is small; 3/√N_mc is the budget.
        assert!((second - t.l2_norm_sq()).abs() <= 3.0 / (n_mc as f64).sqrt());

        let f1 = evaluate_target(&t.restricted_to(|c| c.degree == 1), x.view()).unwrap();
        let f2 = evaluate_target(&t.restricted_to(|c| c.degree == 2), x.view()).unwrap();
        let cross = (&f1 * &f2).mean().unwrap();
        assert!(cross.abs() <= 3.0 / (n_mc as f64).sqrt());
    }
}
