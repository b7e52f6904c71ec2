//! Empirical NTK Gram matrix, its symmetric eigendecomposition and the
//! rank-`r` spectral projectors built from it.

use std::sync::Arc;

use faer::dyn_stack::{GlobalPodBuffer, PodStack};
use faer::linalg::evd::{compute_hermitian_evd, compute_hermitian_evd_req, ComputeVectors};
use faer::{Col, Mat, Parallelism};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ntk::{KernelProfile, KernelSpectrum, INNER_PRODUCT_TOLERANCE};

/// Two features whose inner product exceeds this are treated as the same point.
pub const DUPLICATE_THRESHOLD: f64 = 1.0 - 1e-12;

/// Eigenvalue gaps below this make the rank-`r` projector ill-defined.
pub const TIE_TOLERANCE: f64 = 1e-10;

/// Largest training set the dense pipeline accepts.
pub const MAX_SAMPLES: usize = 8192;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("feature {index} has norm {norm}, expected a unit vector")]
    NotOnSphere { index: usize, norm: f64 },
    #[error("features {first} and {second} coincide (inner product {inner})")]
    DuplicateFeature { first: usize, second: usize, inner: f64 },
    #[error("{0} samples exceed the dense limit of {MAX_SAMPLES}")]
    TooManySamples(usize),
    #[error("empty feature matrix")]
    Empty,
    #[error("symmetric eigensolver produced non-finite output")]
    ConvergenceFailure,
    #[error("projection rank {rank} outside 1..={n}")]
    RankOutOfRange { rank: usize, n: usize },
    #[error("vector of length {got} does not match n = {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Checks every row of `x` is a unit vector.
pub fn check_on_sphere(x: ArrayView2<'_, f64>) -> Result<(), SpectralError> {
    for (index, row) in x.rows().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if !((norm - 1.0).abs() <= INNER_PRODUCT_TOLERANCE) {
            return Err(SpectralError::NotOnSphere { index, norm });
        }
    }
    Ok(())
}

/// The Gram matrix `K_ij = K(x_i, x_j)` and its normalized form `K_n = K / n`.
#[derive(Debug, Clone)]
pub struct GramPair {
    pub k: Array2<f64>,
    pub kn: Array2<f64>,
    pub features: Array2<f64>,
}

impl GramPair {
    pub fn n(&self) -> usize {
        self.k.nrows()
    }
}

pub fn build_gram(features: ArrayView2<'_, f64>) -> Result<GramPair, SpectralError> {
    let n = features.nrows();
    if n == 0 {
        return Err(SpectralError::Empty);
    }
    if n > MAX_SAMPLES {
        return Err(SpectralError::TooManySamples(n));
    }
    check_on_sphere(features)?;

    let inner = features.dot(&features.t());
    // Upper triangle per row, in parallel; rows are independent.
    let rows: Vec<Result<Vec<f64>, SpectralError>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = Vec::with_capacity(n - i);
            row.push(1.0);
            for j in i + 1..n {
                let t = inner[[i, j]];
                if t > DUPLICATE_THRESHOLD {
                    return Err(SpectralError::DuplicateFeature {
                        first: i,
                        second: j,
                        inner: t,
                    });
                }
                row.push(KernelProfile::K.eval(t));
            }
            Ok(row)
        })
        .collect();

    let mut k = Array2::<f64>::zeros((n, n));
    for (i, row) in rows.into_iter().enumerate() {
        let row = row?;
        for (off, v) in row.into_iter().enumerate() {
            k[[i, i + off]] = v;
            k[[i + off, i]] = v;
        }
    }
    let kn = &k / n as f64;
    Ok(GramPair {
        k,
        kn,
        features: features.to_owned(),
    })
}

/// Full symmetric eigendecomposition `K_n = U diag(λ̂) U^T`, eigenvalues non-increasing.
///
/// Within a block of numerically equal eigenvalues the basis order is whatever
/// the solver returns.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub u: Array2<f64>,
    pub eigvals: Vec<f64>,
}

impl Eigen {
    pub fn n(&self) -> usize {
        self.eigvals.len()
    }
}

pub fn eigendecompose(gram: &GramPair) -> Result<Eigen, SpectralError> {
    symmetric_eigen(gram.kn.view())
}

/// Eigendecomposition of a symmetric matrix, sorted by non-increasing eigenvalue.
pub fn symmetric_eigen(a: ArrayView2<'_, f64>) -> Result<Eigen, SpectralError> {
    let n = a.nrows();
    let mat = Mat::<f64>::from_fn(n, n, |i, j| a[[i, j]]);
    let mut s = Col::<f64>::zeros(n);
    let mut vecs = Mat::<f64>::zeros(n, n);
    // Serial on purpose: the result must not depend on the thread pool.
    let par = Parallelism::None;
    let params = Default::default();
    let req = compute_hermitian_evd_req::<f64>(n, ComputeVectors::Yes, par, params)
        .map_err(|_| SpectralError::ConvergenceFailure)?;
    let mut mem = GlobalPodBuffer::new(req);
    compute_hermitian_evd(mat.as_ref(), s.as_mut(), Some(vecs.as_mut()), par, PodStack::new(&mut mem), params);
    // faer sorts ascending; flip to descending.
    let eigvals: Vec<f64> = (0..n).rev().map(|i| s.read(i)).collect();
    let mut u = Array2::<f64>::zeros((n, n));
    for (dst, src) in (0..n).rev().enumerate() {
        for i in 0..n {
            u[[i, dst]] = vecs.read(i, src);
        }
    }
    if !eigvals.iter().all(|v| v.is_finite()) || !u.iter().all(|v| v.is_finite()) {
        return Err(SpectralError::ConvergenceFailure);
    }
    Ok(Eigen { u, eigvals })
}

/// Orthogonal projector `P^(r) = U_r U_r^T` onto the top-`r` eigenvectors of `K_n`.
///
/// The projector shares its eigendecomposition, so projectors of several
/// ranks from one `K_n` are cheap and exactly nested.
#[derive(Debug, Clone)]
pub struct SpectralProjector {
    eigen: Arc<Eigen>,
    rank: usize,
}

pub fn projector(eigen: Arc<Eigen>, rank: usize) -> Result<SpectralProjector, SpectralError> {
    let n = eigen.n();
    if rank == 0 || rank > n {
        return Err(SpectralError::RankOutOfRange { rank, n });
    }
    if rank < n {
        let gap = eigen.eigvals[rank - 1] - eigen.eigvals[rank];
        if gap.abs() < TIE_TOLERANCE {
            log::warn!(
                "rank {rank} splits a tied eigenvalue block (gap {gap:e}); the projector is not uniquely defined"
            );
        }
    }
    Ok(SpectralProjector { eigen, rank })
}

impl SpectralProjector {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn n(&self) -> usize {
        self.eigen.n()
    }

    pub fn eigen(&self) -> &Arc<Eigen> {
        &self.eigen
    }

    /// Eigenvalues of `K_n` (all `n` of them).
    pub fn eigvals(&self) -> &[f64] {
        &self.eigen.eigvals
    }

    pub fn is_identity(&self) -> bool {
        self.rank == self.n()
    }

    fn check_len(&self, len: usize) -> Result<(), SpectralError> {
        if len != self.n() {
            return Err(SpectralError::DimensionMismatch {
                expected: self.n(),
                got: len,
            });
        }
        Ok(())
    }

    /// Coordinates `U_r^T v` in the top-`r` eigenbasis.
    pub fn top_coords(&self, v: ArrayView1<'_, f64>) -> Result<Array1<f64>, SpectralError> {
        self.check_len(v.len())?;
        let ur = self.eigen.u.slice(ndarray::s![.., ..self.rank]);
        Ok(ur.t().dot(&v))
    }

    /// Coordinates `U_{-r}^T v` in the trailing `n - r` eigenvectors.
    pub fn trailing_coords(&self, v: ArrayView1<'_, f64>) -> Result<Array1<f64>, SpectralError> {
        self.check_len(v.len())?;
        let rest = self.eigen.u.slice(ndarray::s![.., self.rank..]);
        Ok(rest.t().dot(&v))
    }

    /// Lifts top-`r` coordinates back to `R^n`: `U_r c`.
    pub fn lift(&self, coords: ArrayView1<'_, f64>) -> Array1<f64> {
        let ur = self.eigen.u.slice(ndarray::s![.., ..self.rank]);
        ur.dot(&coords)
    }

    /// `P v`. Identity rank returns `v` unchanged.
    pub fn apply(&self, v: ArrayView1<'_, f64>) -> Result<Array1<f64>, SpectralError> {
        self.check_len(v.len())?;
        if self.is_identity() {
            return Ok(v.to_owned());
        }
        let c = self.top_coords(v)?;
        Ok(self.lift(c.view()))
    }

    /// `K_n P v`, evaluated as `U_r diag(λ̂_{1..r}) U_r^T v`.
    pub fn apply_kn(&self, v: ArrayView1<'_, f64>) -> Result<Array1<f64>, SpectralError> {
        let mut c = self.top_coords(v)?;
        for (ci, lam) in c.iter_mut().zip(&self.eigen.eigvals) {
            *ci *= lam;
        }
        Ok(self.lift(c.view()))
    }

    /// The dense `n × n` projector; exactly the identity when `r = n`.
    pub fn dense(&self) -> Array2<f64> {
        let n = self.n();
        if self.is_identity() {
            return Array2::eye(n);
        }
        let ur = self.eigen.u.slice(ndarray::s![.., ..self.rank]);
        ur.dot(&ur.t())
    }
}

/// Comparison of the empirical eigenvalues with the population spectrum repeated by multiplicity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub n: usize,
    pub compared: usize,
    pub max_gap: f64,
    pub argmax: usize,
    pub envelope: f64,
    pub delta: f64,
    pub within_envelope: bool,
    /// The envelope is at least 1 and says nothing (eigenvalues of `K_n` lie in `[0, 1]`).
    pub low_n: bool,
}

impl GapReport {
    pub fn note(&self) -> &'static str {
        if self.low_n {
            "low-n, envelope loose"
        } else if self.within_envelope {
            "within envelope"
        } else {
            "outside envelope"
        }
    }
}

/// `2 √(2 log(2/δ) / n)`.
pub fn gap_envelope(n: usize, delta: f64) -> f64 {
    2.0 * (2.0 * (2.0 / delta).ln() / n as f64).sqrt()
}

pub fn empirical_spectrum_gap_check(eigvals: &[f64], spectrum: &KernelSpectrum, n: usize) -> GapReport {
    gap_check_with_delta(eigvals, spectrum, n, 0.05)
}

pub fn gap_check_with_delta(eigvals: &[f64], spectrum: &KernelSpectrum, n: usize, delta: f64) -> GapReport {
    let population = spectrum.extended(n.min(eigvals.len()));
    let compared = population.len();
    let (argmax, max_gap) = population
        .iter()
        .zip(eigvals)
        .map(|(p, e)| (p - e).abs())
        .enumerate()
        .fold((0, 0.0), |acc, (j, g)| if g > acc.1 { (j, g) } else { acc });
    let envelope = gap_envelope(n, delta);
    GapReport {
        n,
        compared,
        max_gap,
        argmax,
        envelope,
        delta,
        within_envelope: max_gap <= envelope,
        low_n: envelope >= 1.0,
    }
}

/// Largest absolute entry of `a - b`.
pub fn max_abs_diff(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    (&a - &b).iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Frobenius norm of `U diag(λ) U^T - K_n`.
pub fn reconstruction_residual(eigen: &Eigen, kn: ArrayView2<'_, f64>) -> f64 {
    let mut scaled = eigen.u.clone();
    for (mut col, lam) in scaled.axis_iter_mut(Axis(1)).zip(&eigen.eigvals) {
        col *= *lam;
    }
    let rebuilt = scaled.dot(&eigen.u.t());
    (&rebuilt - &kn).iter().map(|v| v * v).sum::<f64>().sqrt()
}
