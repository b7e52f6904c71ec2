use serde::{Deserialize, Serialize};

use super::{run_many, Cell, HarnessError, RunConfig, RunRecord, Seeds, Tabular};

/// Seeds of replicate `i`: every stream but `poles` shifts by `i`, so all
/// replicates share one target.
pub fn replicate_seeds(base: Seeds, i: u64) -> Seeds {
    Seeds {
        data: base.data.wrapping_add(i),
        init: base.init.wrapping_add(i),
        noise: base.noise.wrapping_add(i),
        mc: base.mc.wrapping_add(i),
        poles: base.poles,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n: usize,
    pub replicates: usize,
    /// Mean risk over replicates.
    pub risk_mean: f64,
    /// Standard error of that mean across replicates.
    pub risk_se: f64,
    pub mean_train_loss: f64,
    /// `d^{k0} / n`.
    pub rate_reference: f64,
}

impl Tabular for SweepPoint {
    fn columns() -> &'static [&'static str] {
        &["n", "replicates", "risk_mean", "risk_se", "mean_train_loss", "rate_reference"]
    }

    fn cells(&self) -> Vec<Cell> {
        vec![
            self.n.into(),
            self.replicates.into(),
            self.risk_mean.into(),
            self.risk_se.into(),
            self.mean_train_loss.into(),
            self.rate_reference.into(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    /// Least-squares slope of `log(risk)` against `log(n)`.
    pub slope: f64,
    pub intercept: f64,
    pub records: Vec<RunRecord>,
}

/// Least-squares line through `(log x, log y)`; returns `(slope, intercept)`.
pub fn fit_loglog(x: &[f64], y: &[f64]) -> Result<(f64, f64), HarnessError> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(HarnessError::Config("log-log fit needs at least two paired points".into()));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(HarnessError::Config("log-log fit needs positive finite values".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Runs `seeds_per_n` replicates at each `n`, averages the risk and fits the log-log slope.
pub fn rate_sweep(
    base: &RunConfig,
    n_grid: &[usize],
    seeds_per_n: usize,
    jobs: usize,
) -> Result<SweepResult, HarnessError> {
    if n_grid.len() < 4 {
        return Err(HarnessError::Config(format!(
            "rate sweep needs at least 4 sample sizes, got {}",
            n_grid.len()
        )));
    }
    if !n_grid.windows(2).all(|w| w[0] < w[1]) {
        return Err(HarnessError::Config("rate sweep grid must be strictly increasing".into()));
    }
    if seeds_per_n == 0 {
        return Err(HarnessError::Config("rate sweep needs at least one seed per n".into()));
    }
    let mut configs = Vec::with_capacity(n_grid.len() * seeds_per_n);
    for &n in n_grid {
        for i in 0..seeds_per_n {
            let mut cfg = base.clone();
            cfg.n = n;
            cfg.seeds = replicate_seeds(base.seeds, i as u64);
            configs.push(cfg);
        }
    }
    let records = run_many(&configs, jobs)?.into_iter().collect::<Result<Vec<_>, _>>()?;

    let points: Vec<SweepPoint> = n_grid
        .iter()
        .zip(records.chunks(seeds_per_n))
        .map(|(&n, group)| {
            let k = group.len() as f64;
            let mean = group.iter().map(|r| r.risk_mean).sum::<f64>() / k;
            let var = if group.len() > 1 {
                group.iter().map(|r| (r.risk_mean - mean).powi(2)).sum::<f64>() / (k - 1.0)
            } else {
                0.0
            };
            SweepPoint {
                n,
                replicates: group.len(),
                risk_mean: mean,
                risk_se: (var / k).sqrt(),
                mean_train_loss: group.iter().map(|r| r.final_train_loss).sum::<f64>() / k,
                rate_reference: group[0].rate_reference,
            }
        })
        .collect();
    let xs: Vec<f64> = points.iter().map(|p| p.n as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.risk_mean).collect();
    let (slope, intercept) = fit_loglog(&xs, &ys)?;
    Ok(SweepResult {
        points,
        slope,
        intercept,
        records,
    })
}
