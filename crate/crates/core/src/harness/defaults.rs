use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::select::LossMode;

/// The checked-in defaults file.
pub const DEFAULTS_JSON: &str = include_str!("../../defaults.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Defaults {
    pub version: u32,
    pub eta: f64,
    pub kappa: f64,
    pub n_mc: usize,
    pub sweep: SweepDefaults,
    pub uniform: UniformDefaults,
    pub select: SelectDefaults,
    pub tolerances: Tolerances,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepDefaults {
    pub n_grid: Vec<usize>,
    pub seeds_per_n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformDefaults {
    pub d: usize,
    pub m_grid: Vec<usize>,
    pub n_probes: usize,
    pub seeds: usize,
    pub kappa: f64,
    pub radii: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectDefaults {
    pub start_degree: usize,
    pub beta0: f64,
    pub loss_mode: LossMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub backend_agreement: f64,
    pub rate_slope: [f64; 2],
    pub width_halving: [f64; 2],
}

pub fn defaults() -> &'static Defaults {
    static CELL: OnceLock<Defaults> = OnceLock::new();
    CELL.get_or_init(|| serde_json::from_str(DEFAULTS_JSON).expect("defaults.json is valid"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse() {
        let d = defaults();
        assert_eq!(d.version, 1);
        assert_eq!(d.eta, crate::netgdp::DEFAULT_ETA);
        assert!(d.sweep.n_grid.windows(2).all(|w| w[0] < w[1]));
    }
}
