//! Adaptive degree selection: a descending sweep over candidate degrees with
//! one GDP run per level, compared against `β0² μ_{ℓ+1}` thresholds.

use std::sync::Arc;

use ndarray::Array1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harmonics::{cumulative_dim, HarmonicsError, SphereDim};
use crate::harness::{format_float, Cell, Tabular};
use crate::netgdp::{default_steps, init_network, kernel_train, train, Backend, GdpConfig, NetError, DEFAULT_ETA};
use crate::ntk::{spectrum_closed_form, KernelSpectrum};
use crate::spectral::{build_gram, eigendecompose, projector, Eigen, SpectralError};
use crate::target::TrainingSet;

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("start degree {degree} needs rank m_L = {rank} but only n = {n} samples are available")]
    StartDegreeTooLarge { degree: usize, rank: u64, n: usize },
    #[error("beta0 must be positive and finite, got {0}")]
    BadBeta(f64),
    #[error("spectrum is for d = {spectrum}, training set for d = {data}")]
    DimensionMismatch { spectrum: usize, data: usize },
    #[error("finite-width selection needs an even width m and kappa")]
    MissingWidth,
    #[error(transparent)]
    Harmonics(#[from] HarmonicsError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("ratio table: {0}")]
    Table(String),
}

/// How the per-level loss `E_ℓ` is measured on the training sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// `(1/n) ‖f(S) - f*(S)‖²`, for synthetic data where `f*(S)` is known.
    Clean,
    /// `(1/n) ‖f(S) - y‖² - σ0²`, floored at zero.
    Debiased,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectConfig {
    /// Start degree `L`.
    pub start_degree: usize,
    pub beta0: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    pub backend: Backend,
    pub loss_mode: LossMode,
    /// Width for the finite backend.
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default)]
    pub kappa: Option<f64>,
    /// Initialization seed for the finite backend; every level starts from the same network.
    #[serde(default)]
    pub init_seed: u64,
    /// Accepted for completeness; the decision rule does not use it.
    #[serde(default)]
    pub epsilon0: Option<f64>,
}

fn default_eta() -> f64 {
    DEFAULT_ETA
}

impl SelectConfig {
    pub fn kernel(start_degree: usize, beta0: f64, loss_mode: LossMode) -> Self {
        Self {
            start_degree,
            beta0,
            eta: DEFAULT_ETA,
            backend: Backend::KernelExact,
            loss_mode,
            m: None,
            kappa: None,
            init_seed: 0,
            epsilon0: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub beta0: f64,
    /// `β0² / 4`.
    pub lower: f64,
    /// `β0² / 8`.
    pub upper: f64,
}

impl Thresholds {
    pub fn new(beta0: f64) -> Self {
        let b2 = beta0 * beta0;
        Self {
            beta0,
            lower: b2 / 4.0,
            upper: b2 / 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub ell: usize,
    /// `r = m_ℓ`.
    pub r: usize,
    /// `T_ℓ`.
    pub steps: usize,
    /// `E_ℓ`.
    pub loss: f64,
    /// `μ_{ℓ+1}`.
    pub mu_next: f64,
    /// `E_ℓ / μ_{ℓ+1}`.
    pub ratio: f64,
    /// `ratio >= β0²/4`.
    pub lower_hit: bool,
    /// `ratio <= β0²/8`.
    pub upper_hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub chosen_degree: Option<usize>,
    /// Level `ℓ` whose lower test fired together with the upper test at `ℓ + 1`.
    /// `None` when the sweep ran out, including the `ℓ = 0` boundary case.
    pub triggered_level: Option<usize>,
    /// Ordered by descending `ℓ`.
    pub per_level: Vec<LevelRecord>,
    pub thresholds: Thresholds,
    pub loss_mode: LossMode,
    pub backend: Backend,
}

/// `μ_ℓ`, falling back to the closed form past the end of `spectrum`.
fn mu_lookup(spectrum: &KernelSpectrum, max_degree: usize) -> Vec<f64> {
    if spectrum.mu.len() > max_degree {
        return spectrum.mu[..=max_degree].to_vec();
    }
    let closed = spectrum_closed_form(spectrum.d, max_degree);
    let mut mu = spectrum.mu.clone();
    mu.extend_from_slice(&closed.mu[spectrum.mu.len()..]);
    mu
}

/// Runs the descending sweep `ℓ = L, ..., 0` and stops at the first `ℓ` with
/// `E_ℓ/μ_{ℓ+1} >= β0²/4` and `E_{ℓ+1}/μ_{ℓ+2} <= β0²/8`, returning `ℓ + 1`.
///
/// If no level triggers, the answer is `0` when `E_0/μ_1 <= β0²/8` and `None` otherwise.
/// All levels share one eigendecomposition of `K_n`.
pub fn select_degree(
    ts: &TrainingSet,
    spectrum: &KernelSpectrum,
    cfg: &SelectConfig,
) -> Result<SelectionReport, SelectError> {
    let eigen = Arc::new(eigendecompose(&build_gram(ts.features.view())?)?);
    select_degree_with(ts, spectrum, cfg, eigen)
}

/// [`select_degree`] with a precomputed eigendecomposition of `K_n`.
pub fn select_degree_with(
    ts: &TrainingSet,
    spectrum: &KernelSpectrum,
    cfg: &SelectConfig,
    eigen: Arc<Eigen>,
) -> Result<SelectionReport, SelectError> {
    if !(cfg.beta0 > 0.0 && cfg.beta0.is_finite()) {
        return Err(SelectError::BadBeta(cfg.beta0));
    }
    let d = spectrum.d;
    if d.get() != ts.features.ncols() {
        return Err(SelectError::DimensionMismatch {
            spectrum: d.get(),
            data: ts.features.ncols(),
        });
    }
    let n = ts.n();
    let top = cumulative_dim(d, cfg.start_degree)?;
    if top > n as u64 {
        return Err(SelectError::StartDegreeTooLarge {
            degree: cfg.start_degree,
            rank: top,
            n,
        });
    }
    if eigen.n() != n {
        return Err(SpectralError::DimensionMismatch {
            expected: n,
            got: eigen.n(),
        }
        .into());
    }
    if cfg.backend == Backend::FiniteWidth && (cfg.m.is_none() || cfg.kappa.is_none()) {
        return Err(SelectError::MissingWidth);
    }

    let mu = mu_lookup(spectrum, cfg.start_degree + 2);
    let thresholds = Thresholds::new(cfg.beta0);
    let mut per_level: Vec<LevelRecord> = Vec::new();
    let mut chosen = None;
    let mut triggered = None;

    for ell in (0..=cfg.start_degree).rev() {
        let r = cumulative_dim(d, ell)? as usize;
        let steps = default_steps(n, d.get(), ell);
        let loss = level_loss(ts, &eigen, cfg, r, steps)?;
        let ratio = loss / mu[ell + 1];
        let record = LevelRecord {
            ell,
            r,
            steps,
            loss,
            mu_next: mu[ell + 1],
            ratio,
            lower_hit: ratio >= thresholds.lower,
            upper_hit: ratio <= thresholds.upper,
        };
        let previous_upper = per_level.last().map(|p| p.upper_hit);
        log::debug!("level {ell}: r = {r}, T = {steps}, E = {loss:e}, ratio = {ratio:e}");
        let lower_hit = record.lower_hit;
        per_level.push(record);
        if lower_hit && previous_upper == Some(true) {
            chosen = Some(ell + 1);
            triggered = Some(ell);
            break;
        }
    }
    if chosen.is_none() {
        if let Some(last) = per_level.last().filter(|l| l.ell == 0) {
            if last.upper_hit {
                chosen = Some(0);
            }
        }
    }
    Ok(SelectionReport {
        chosen_degree: chosen,
        triggered_level: triggered,
        per_level,
        thresholds,
        loss_mode: cfg.loss_mode,
        backend: cfg.backend,
    })
}

fn level_loss(
    ts: &TrainingSet,
    eigen: &Arc<Eigen>,
    cfg: &SelectConfig,
    rank: usize,
    steps: usize,
) -> Result<f64, SelectError> {
    let p = projector(Arc::clone(eigen), rank)?;
    let gdp = GdpConfig::new(cfg.eta, steps, rank, cfg.backend);
    let fitted: Array1<f64> = match cfg.backend {
        Backend::KernelExact => {
            let (state, _) = kernel_train(ts, &p, &gdp)?;
            &ts.y + &state.u
        }
        Backend::FiniteWidth => {
            let (m, kappa) = cfg.m.zip(cfg.kappa).ok_or(SelectError::MissingWidth)?;
            let net = init_network(m, SphereDim::new(ts.features.ncols())?, kappa, cfg.init_seed)?;
            let (net, _) = train(net, ts, &p, &gdp)?;
            net.forward(ts.features.view())?
        }
    };
    let n = ts.n() as f64;
    Ok(match cfg.loss_mode {
        LossMode::Clean => {
            let e = &fitted - &ts.f_star;
            e.dot(&e) / n
        }
        LossMode::Debiased => {
            let e = &fitted - &ts.y;
            (e.dot(&e) / n - ts.sigma0 * ts.sigma0).max(0.0)
        }
    })
}

impl Tabular for LevelRecord {
    fn columns() -> &'static [&'static str] {
        &["ell", "r", "T_ell", "E_ell", "mu_next", "ratio", "lower_hit", "upper_hit"]
    }

    fn cells(&self) -> Vec<Cell> {
        vec![
            self.ell.into(),
            self.r.into(),
            self.steps.into(),
            self.loss.into(),
            self.mu_next.into(),
            self.ratio.into(),
            self.lower_hit.into(),
            self.upper_hit.into(),
        ]
    }
}

/// Per-level CSV rows (header first) in descending `ℓ`.
pub fn loss_ratio_table(report: &SelectionReport) -> Result<String, SelectError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| SelectError::Table(e.to_string());
    w.write_record(LevelRecord::columns()).map_err(to_err)?;
    for level in &report.per_level {
        w.write_record(level.cells().iter().map(cell_text)).map_err(to_err)?;
    }
    let bytes = w.into_inner().map_err(|e| SelectError::Table(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| SelectError::Table(e.to_string()))
}

fn cell_text(c: &Cell) -> String {
    match c {
        Cell::Float(v) => format_float(*v),
        Cell::Uint(v) => v.to_string(),
        Cell::Int(v) => v.to_string(),
        Cell::Bool(v) => v.to_string(),
        Cell::Text(t) => t.clone(),
        Cell::Empty => String::new(),
    }
}
