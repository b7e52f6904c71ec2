use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{defaults, HarnessError};
use crate::harmonics::{cumulative_dim, SphereDim};
use crate::netgdp::{default_steps, Backend};
use crate::netgdp::MIN_MC_SAMPLES;
use crate::target::TargetSpec;

/// The five independent random streams of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub data: u64,
    pub init: u64,
    pub noise: u64,
    pub mc: u64,
    pub poles: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            data: 1,
            init: 2,
            noise: 3,
            mc: 4,
            poles: 5,
        }
    }
}

/// One training run. Serialized flat; `T` and `r` fall back to
/// `max(1, round(n/d^k0))` and `m_{k0}` when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawConfig")]
pub struct RunConfig {
    pub d: usize,
    pub k0: usize,
    pub n: usize,
    /// Width of the finite network; required for `finite_width`.
    pub m: Option<usize>,
    pub kappa: f64,
    pub eta: f64,
    #[serde(rename = "T")]
    pub steps: Option<usize>,
    pub r: Option<usize>,
    pub sigma0: f64,
    pub gamma0: f64,
    /// `c_ℓ` for `ℓ = 0..=k0`: the L² norm of the degree-`ℓ` part of the target.
    pub degree_energies: Vec<f64>,
    pub backend: Backend,
    #[serde(rename = "N_mc")]
    pub n_mc: usize,
    pub seeds: Seeds,
    pub output_path: Option<PathBuf>,
}

/// Wire form: flat target fields, or a nested `target` object in the
/// `{"k0", "energies", "gamma0", "pole_seed"}` layout.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    d: usize,
    k0: Option<usize>,
    n: usize,
    #[serde(default)]
    m: Option<usize>,
    kappa: Option<f64>,
    eta: Option<f64>,
    #[serde(rename = "T", default)]
    steps: Option<usize>,
    #[serde(default)]
    r: Option<usize>,
    #[serde(default)]
    sigma0: f64,
    gamma0: Option<f64>,
    degree_energies: Option<Vec<f64>>,
    #[serde(default = "default_backend")]
    backend: Backend,
    #[serde(rename = "N_mc")]
    n_mc: Option<usize>,
    seeds: Option<Seeds>,
    #[serde(default)]
    output_path: Option<PathBuf>,
    #[serde(default)]
    target: Option<TargetSpec>,
}

fn default_backend() -> Backend {
    Backend::KernelExact
}

impl TryFrom<RawConfig> for RunConfig {
    type Error = String;

    fn try_from(raw: RawConfig) -> Result<Self, String> {
        let mut seeds = raw.seeds.unwrap_or_default();
        let (k0, gamma0, energies) = match raw.target {
            Some(t) => {
                if raw.k0.is_some() || raw.gamma0.is_some() || raw.degree_energies.is_some() {
                    return Err("give the target either as `target` or as flat k0/gamma0/degree_energies, not both".into());
                }
                seeds.poles = t.pole_seed;
                (t.k0, t.gamma0, t.energies)
            }
            None => (
                raw.k0.ok_or("missing field `k0`")?,
                raw.gamma0.ok_or("missing field `gamma0`")?,
                raw.degree_energies.ok_or("missing field `degree_energies`")?,
            ),
        };
        let defaults = defaults();
        Ok(RunConfig {
            d: raw.d,
            k0,
            n: raw.n,
            m: raw.m,
            kappa: raw.kappa.unwrap_or(defaults.kappa),
            eta: raw.eta.unwrap_or(defaults.eta),
            steps: raw.steps,
            r: raw.r,
            sigma0: raw.sigma0,
            gamma0,
            degree_energies: energies,
            backend: raw.backend,
            n_mc: raw.n_mc.unwrap_or(defaults.n_mc),
            seeds,
            output_path: raw.output_path,
        })
    }
}

impl RunConfig {
    /// Kernel-backend config with defaults for everything not listed.
    pub fn kernel(d: usize, k0: usize, n: usize, sigma0: f64, gamma0: f64, degree_energies: Vec<f64>) -> Self {
        let defaults = defaults();
        Self {
            d,
            k0,
            n,
            m: None,
            kappa: defaults.kappa,
            eta: defaults.eta,
            steps: None,
            r: None,
            sigma0,
            gamma0,
            degree_energies,
            backend: Backend::KernelExact,
            n_mc: defaults.n_mc,
            seeds: Seeds::default(),
            output_path: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    pub fn sphere_dim(&self) -> Result<SphereDim, HarnessError> {
        SphereDim::new(self.d).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn target_spec(&self) -> TargetSpec {
        TargetSpec {
            k0: self.k0,
            energies: self.degree_energies.clone(),
            gamma0: self.gamma0,
            pole_seed: self.seeds.poles,
        }
    }

    /// `T`, or the default step rule.
    pub fn resolved_steps(&self) -> usize {
        self.steps.unwrap_or_else(|| default_steps(self.n, self.d, self.k0))
    }

    /// `r`, or `m_{k0}`.
    pub fn resolved_rank(&self) -> Result<usize, HarnessError> {
        match self.r {
            Some(r) => Ok(r),
            None => {
                let m = cumulative_dim(self.sphere_dim()?, self.k0).map_err(|e| HarnessError::Config(e.to_string()))?;
                usize::try_from(m).map_err(|_| HarnessError::Config(format!("m_k0 = {m} does not fit in memory")))
            }
        }
    }

    /// Range checks; anything deeper (norm budget, duplicate features) is caught downstream.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        self.sphere_dim()?;
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if self.degree_energies.len() != self.k0 + 1 {
            return bad(format!(
                "degree_energies has {} entries, expected k0 + 1 = {}",
                self.degree_energies.len(),
                self.k0 + 1
            ));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return bad(format!("eta = {} outside (0, 1)", self.eta));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return bad(format!("kappa = {} must be positive", self.kappa));
        }
        if !(self.sigma0 >= 0.0 && self.sigma0.is_finite()) {
            return bad(format!("sigma0 = {} must be non-negative", self.sigma0));
        }
        if !(self.gamma0 > 0.0 && self.gamma0.is_finite()) {
            return bad(format!("gamma0 = {} must be positive", self.gamma0));
        }
        if self.steps == Some(0) {
            return bad("T must be at least 1".into());
        }
        if self.n_mc < MIN_MC_SAMPLES {
            return bad(format!("N_mc = {} is below the minimum {MIN_MC_SAMPLES}", self.n_mc));
        }
        let r = self.resolved_rank()?;
        if r == 0 || r > self.n {
            return bad(format!("rank r = {r} outside 1..=n = {}", self.n));
        }
        if self.backend == Backend::FiniteWidth {
            match self.m {
                Some(m) if m >= 2 && m % 2 == 0 => {}
                Some(m) => return bad(format!("width m = {m} must be even and at least 2")),
                None => return bad("finite_width backend needs the width m".into()),
            }
        }
        Ok(())
    }
}

/// Short SHA-256 of the config (without `output_path`), used to key records.
pub fn config_hash(cfg: &RunConfig) -> String {
    let mut keyed = cfg.clone();
    keyed.output_path = None;
    let bytes = serde_json::to_vec(&keyed).expect("config serializes");
    let digest = Sha256::digest(&bytes);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}
