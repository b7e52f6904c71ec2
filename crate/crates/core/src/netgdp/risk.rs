use ndarray::{Array1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{KernelModelState, NetError, NetworkState};
use crate::harmonics::sample_sphere_with;
use crate::ntk::KernelProfile;
use crate::target::{evaluate_unchecked, ZonalTarget};

pub const MIN_MC_SAMPLES: usize = 1000;

/// Monte Carlo draws per batch.
const MC_BATCH: usize = 1024;

/// Anything that can be evaluated at points on the sphere.
pub trait Predictor {
    /// Predictions at the rows of `x`, assumed to be unit vectors.
    fn predict(&self, x: ArrayView2<'_, f64>) -> Array1<f64>;
}

impl Predictor for NetworkState {
    fn predict(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        self.forward_unchecked(x)
    }
}

impl Predictor for KernelModelState {
    fn predict(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        let mut kx = x.dot(&self.features.t());
        kx.mapv_inplace(|t| KernelProfile::K.eval(t));
        kx.dot(&self.alpha)
    }
}

/// The all-zero model.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroModel;

impl Predictor for ZeroModel {
    fn predict(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        Array1::zeros(x.nrows())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub mean: f64,
    /// Standard error of the mean.
    pub se: f64,
    pub n_mc: usize,
}

/// `E_P[(f - f*)²]` by Monte Carlo over `n_mc` fresh uniform points.
pub fn population_risk<M: Predictor + ?Sized>(
    model: &M,
    target: &ZonalTarget,
    n_mc: usize,
    seed: u64,
) -> Result<RiskEstimate, NetError> {
    if n_mc < MIN_MC_SAMPLES {
        return Err(NetError::TooFewMcSamples(n_mc));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut left = n_mc;
    while left > 0 {
        let batch = left.min(MC_BATCH);
        let x = sample_sphere_with(target.d, batch, &mut rng);
        let err = model.predict(x.view()) - evaluate_unchecked(target, x.view());
        for e in err.iter() {
            let sq = e * e;
            sum += sq;
            sum_sq += sq * sq;
        }
        left -= batch;
    }
    let nf = n_mc as f64;
    let mean = sum / nf;
    let var = ((sum_sq / nf - mean * mean) * nf / (nf - 1.0)).max(0.0);
    Ok(RiskEstimate {
        mean,
        se: (var / nf).sqrt(),
        n_mc,
    })
}
