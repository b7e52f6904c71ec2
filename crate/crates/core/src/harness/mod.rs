//! Experiment orchestration: run configs, seed streams, sweeps, audits and
//! table emission. The CLI is a thin layer over this module.

mod audit;
mod config;
mod defaults;
mod emit;
mod plot;
mod run;
mod sweep;

use std::path::PathBuf;

use thiserror::Error;

pub use audit::{uniform_convergence_audit, AuditRow, UniformAudit};
pub use config::{config_hash, RunConfig, Seeds};
pub use defaults::{defaults, Defaults, DEFAULTS_JSON};
pub use emit::{emit, format_float, write_json, Cell, Format, Tabular};
pub use plot::loglog_svg;
pub use run::{
    paired_baseline, run_many, run_one, run_one_detailed, select_from_config, spectrum_table, RunArtifacts, RunRecord,
    SpectrumRow,
};
pub use sweep::{fit_loglog, rate_sweep, replicate_seeds, SweepPoint, SweepResult};

use crate::netgdp::NetError;
use crate::select::SelectError;
use crate::spectral::SpectralError;
use crate::target::TargetError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Target(#[from] TargetError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("run {label}: {source}")]
    Run {
        label: String,
        #[source]
        source: Box<HarnessError>,
    },
}

impl HarnessError {
    /// Process exit code: 2 config, 3 numerical divergence, 4 IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Run { source, .. } => source.exit_code(),
            HarnessError::Io { .. } | HarnessError::Csv { .. } => 4,
            HarnessError::Net(NetError::Io(_)) => 4,
            HarnessError::Net(NetError::NumericalDivergence { .. })
            | HarnessError::Net(NetError::Spectral(SpectralError::ConvergenceFailure))
            | HarnessError::Spectral(SpectralError::ConvergenceFailure)
            | HarnessError::Select(SelectError::Net(NetError::NumericalDivergence { .. }))
            | HarnessError::Select(SelectError::Spectral(SpectralError::ConvergenceFailure)) => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Bounded worker pool of `jobs` threads (0 means one per logical core).
pub fn worker_pool(jobs: usize) -> Result<rayon::ThreadPool, HarnessError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| HarnessError::Config(format!("cannot build worker pool: {e}")))
}
