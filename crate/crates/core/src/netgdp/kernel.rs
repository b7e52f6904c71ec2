use ndarray::{Array1, Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use super::{Backend, GdpConfig, NetError, TrainTrace, DIVERGENCE_CHECK_EVERY};
use crate::spectral::SpectralProjector;
use crate::target::TrainingSet;

/// Infinite-width GDP model `f_t(x) = Σ_i K(x, x_i) α_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelModelState {
    /// `u(t) = f_t(S) - y`.
    pub u: Array1<f64>,
    pub alpha: Array1<f64>,
    pub features: Array2<f64>,
    /// `u(0), ..., u(T)` when the config asked for it, empty otherwise.
    pub history: Vec<Array1<f64>>,
}

impl KernelModelState {
    /// `max_i |(K α)_i - (y_i + u_i)|`, which should be at rounding level.
    pub fn representer_defect(&self, k: ArrayView2<'_, f64>, y: &Array1<f64>) -> f64 {
        let fitted = k.dot(&self.alpha);
        let mut worst: f64 = 0.0;
        Zip::from(&fitted).and(y).and(&self.u).for_each(|f, yy, uu| {
            worst = worst.max((f - (yy + uu)).abs());
        });
        worst
    }
}

/// Iterates `u(t+1) = (I - η K_n P) u(t)` from `u(0) = -y`, with
/// `α(t+1) = α(t) - (η/n) P u(t)`.
///
/// `K_n P = U_r diag(λ̂_{1..r}) U_r^T`, so each step costs `O(n r)` after the
/// eigendecomposition.
pub fn kernel_train(
    ts: &TrainingSet,
    p: &SpectralProjector,
    cfg: &GdpConfig,
) -> Result<(KernelModelState, TrainTrace), NetError> {
    if cfg.backend != Backend::KernelExact {
        return Err(NetError::BackendMismatch {
            configured: cfg.backend,
            called: Backend::KernelExact,
        });
    }
    let n = ts.n();
    cfg.validate(n)?;
    if p.n() != n || p.rank() != cfg.rank {
        return Err(NetError::DimensionMismatch(format!(
            "projector (n = {}, rank = {}) does not match config rank {} with n = {n}",
            p.n(),
            p.rank(),
            cfg.rank
        )));
    }

    let eta = cfg.eta;
    let mut u = -&ts.y;
    let mut alpha = Array1::<f64>::zeros(n);
    let mut trace = TrainTrace::default();
    let mut history = Vec::new();

    for t in 0..=cfg.steps {
        let res_sq = u.dot(&u);
        if (t % DIVERGENCE_CHECK_EVERY == 0 || t == cfg.steps) && !res_sq.is_finite() {
            return Err(NetError::NumericalDivergence { step: t });
        }
        trace.push(res_sq, n, 0.0, 0.0);
        if cfg.record_residuals {
            history.push(u.clone());
        }
        if t == cfg.steps {
            break;
        }
        let pu = p.apply(u.view())?;
        let knpu = p.apply_kn(u.view())?;
        alpha.scaled_add(-eta / n as f64, &pu);
        u.scaled_add(-eta, &knpu);
    }

    Ok((
        KernelModelState {
            u,
            alpha,
            features: ts.features.clone(),
            history,
        },
        trace,
    ))
}
