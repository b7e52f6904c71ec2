//! Two-layer ReLU network with the augmented feature, trained by gradient
//! descent with a spectral projection of the residual (GDP).
//!
//! Two backends run the same recursion:
//! * [`train`] updates a finite-width [`NetworkState`];
//! * [`kernel_train`] iterates the exact infinite-width residual recursion
//!   `u(t+1) = (I - η K_n P) u(t)` and keeps representer coefficients so the
//!   model can be evaluated off the training set.

mod checkpoint;
mod kernel;
mod network;
mod risk;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointHeader, CHECKPOINT_MAGIC};
pub use kernel::{kernel_train, KernelModelState};
pub use network::{gdp_step, init_network, train, NetworkState};
pub use risk::{population_risk, Predictor, RiskEstimate, ZeroModel, MIN_MC_SAMPLES};

use crate::spectral::SpectralError;

/// Steps between NaN/Inf checks.
pub const DIVERGENCE_CHECK_EVERY: usize = 10;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("width m = {0} must be even and at least 2")]
    OddWidth(usize),
    #[error("initialization scale kappa must be positive and finite, got {0}")]
    BadKappa(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("learning rate eta = {0} outside (0, 1)")]
    BadLearningRate(f64),
    #[error("step count must be at least 1")]
    ZeroSteps,
    #[error("projection rank {rank} outside 1..={n}")]
    BadRank { rank: usize, n: usize },
    #[error("config selects the {configured:?} backend but {called:?} was called")]
    BackendMismatch { configured: Backend, called: Backend },
    #[error("training diverged (non-finite values) by step {step}")]
    NumericalDivergence { step: usize },
    #[error("Monte Carlo risk needs at least {MIN_MC_SAMPLES} samples, got {0}")]
    TooFewMcSamples(usize),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    FiniteWidth,
    KernelExact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdpConfig {
    pub eta: f64,
    pub steps: usize,
    pub rank: usize,
    pub backend: Backend,
    /// Keep every residual vector `u(t)` (kernel backend only).
    #[serde(default)]
    pub record_residuals: bool,
}

impl GdpConfig {
    pub fn new(eta: f64, steps: usize, rank: usize, backend: Backend) -> Self {
        Self {
            eta,
            steps,
            rank,
            backend,
            record_residuals: false,
        }
    }

    /// Checks the config against a training set of `n` samples.
    pub fn validate(&self, n: usize) -> Result<(), NetError> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(NetError::BadLearningRate(self.eta));
        }
        if self.steps == 0 {
            return Err(NetError::ZeroSteps);
        }
        if self.rank == 0 || self.rank > n {
            return Err(NetError::BadRank { rank: self.rank, n });
        }
        Ok(())
    }
}

/// `T = max(1, round(n / d^k))`.
pub fn default_steps(n: usize, d: usize, degree: usize) -> usize {
    let t = n as f64 / (d as f64).powi(degree as i32);
    (t.round() as usize).max(1)
}

/// Default learning rate.
pub const DEFAULT_ETA: f64 = 0.5;

/// Per-step diagnostics; every vector has `T + 1` entries (index `t` is after `t` steps).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// `(1/2n) ‖ŷ(t) - y‖²`.
    pub loss: Vec<f64>,
    /// `‖u(t)‖` with `u(t) = ŷ(t) - y`.
    pub residual_norm: Vec<f64>,
    /// `max_r ‖w_r(t) - w_r(0)‖` (finite backend; zeros for the kernel backend).
    pub max_movement: Vec<f64>,
    /// `η ĉ_u t / √m` with `ĉ_u = max_{t' <= t} ‖u(t')‖ / √n` (finite backend).
    pub r_bound: Vec<f64>,
}

impl TrainTrace {
    pub fn len(&self) -> usize {
        self.loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loss.is_empty()
    }

    pub fn final_loss(&self) -> f64 {
        *self.loss.last().unwrap_or(&f64::NAN)
    }

    /// Loss after `t` steps, clamped to the recorded range.
    pub fn loss_at(&self, t: usize) -> f64 {
        self.loss[t.min(self.loss.len().saturating_sub(1))]
    }

    pub(crate) fn push(&mut self, residual_sq: f64, n: usize, movement: f64, bound: f64) {
        self.loss.push(residual_sq / (2.0 * n as f64));
        self.residual_norm.push(residual_sq.sqrt());
        self.max_movement.push(movement);
        self.r_bound.push(bound);
    }
}
