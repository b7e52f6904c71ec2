use serde::{Deserialize, Serialize};

use super::{Cell, HarnessError, Tabular};
use crate::harmonics::{sample_sphere, SphereDim};
use crate::netgdp::init_network;
use crate::ntk::{band_reference, band_sup_error, kernel_sup_error};

/// Offset between a replicate's weight seed and its probe seed.
const PROBE_SEED_OFFSET: u64 = 0x5eed_0000_0000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub m: usize,
    pub seed: u64,
    /// `h` for `sup |ĥ - K^(0)|`, `v` for `sup |v̂_R - 2R/(√(2π)κ)|`.
    pub quantity: String,
    pub radius: Option<f64>,
    pub sup_error: f64,
    /// `√(d log m / m)`.
    pub reference_rate: f64,
    pub ratio: f64,
}

impl Tabular for AuditRow {
    fn columns() -> &'static [&'static str] {
        &["m", "seed", "quantity", "radius", "sup_error", "reference_rate", "ratio"]
    }

    fn cells(&self) -> Vec<Cell> {
        vec![
            self.m.into(),
            self.seed.into(),
            Cell::Text(self.quantity.clone()),
            self.radius.into(),
            self.sup_error.into(),
            self.reference_rate.into(),
            self.ratio.into(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformAudit {
    pub d: usize,
    pub kappa: f64,
    pub n_probes: usize,
    pub rows: Vec<AuditRow>,
}

impl UniformAudit {
    /// Mean `ĥ` sup-error over seeds at each width, in grid order.
    pub fn mean_kernel_error(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64, usize)> = Vec::new();
        for row in self.rows.iter().filter(|r| r.quantity == "h") {
            match out.iter_mut().find(|(m, _, _)| *m == row.m) {
                Some(entry) => {
                    entry.1 += row.sup_error;
                    entry.2 += 1;
                }
                None => out.push((row.m, row.sup_error, 1)),
            }
        }
        out.into_iter().map(|(m, s, k)| (m, s / k as f64)).collect()
    }
}

/// Sup-errors of the finite-width estimators at initialization, per width and seed.
///
/// Seed `s` draws the network from `s` and the probes from `s + PROBE_SEED_OFFSET`.
pub fn uniform_convergence_audit(
    d: usize,
    m_grid: &[usize],
    n_probes: usize,
    seeds: &[u64],
    kappa: f64,
    radii: &[f64],
) -> Result<UniformAudit, HarnessError> {
    let dim = SphereDim::new(d).map_err(|e| HarnessError::Config(e.to_string()))?;
    if !m_grid.windows(2).all(|w| w[0] < w[1]) {
        return Err(HarnessError::Config("width grid must be increasing".into()));
    }
    if n_probes == 0 {
        return Err(HarnessError::Config("need at least one probe".into()));
    }
    let mut rows = Vec::new();
    for &m in m_grid {
        let reference_rate = (d as f64 * (m as f64).ln() / m as f64).sqrt();
        for &seed in seeds {
            let net = init_network(m, dim, kappa, seed)?;
            let probes = sample_sphere(dim, n_probes, seed.wrapping_add(PROBE_SEED_OFFSET));
            let h = kernel_sup_error(net.w0.view(), probes.view()).map_err(|e| HarnessError::Config(e.to_string()))?;
            rows.push(AuditRow {
                m,
                seed,
                quantity: "h".into(),
                radius: None,
                sup_error: h.sup_error,
                reference_rate,
                ratio: h.sup_error / reference_rate,
            });
            for &radius in radii {
                let v = band_sup_error(net.w0.view(), probes.view(), radius, band_reference(radius, kappa))
                    .map_err(|e| HarnessError::Config(e.to_string()))?;
                rows.push(AuditRow {
                    m,
                    seed,
                    quantity: "v".into(),
                    radius: Some(radius),
                    sup_error: v.sup_error,
                    reference_rate,
                    ratio: v.sup_error / reference_rate,
                });
            }
        }
    }
    Ok(UniformAudit {
        d,
        kappa,
        n_probes,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_shrinks_with_width() {
        let audit = uniform_convergence_audit(4, &[256, 16384], 20, &[1, 2, 3], 1.0, &[0.1]).unwrap();
        assert_eq!(audit.rows.len(), 2 * 3 * 2);
        let means = audit.mean_kernel_error();
        assert!(means[1].1 < means[0].1);
        for r in &audit.rows {
            assert!(r.sup_error >= 0.0 && r.sup_error <= 1.0);
        }
    }

    #[test]
    fn rejects_unsorted_grid() {
        assert!(uniform_convergence_audit(4, &[64, 32], 5, &[1], 1.0, &[]).is_err());
    }
}
