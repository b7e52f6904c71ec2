use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sweep::replicate_seeds;
use super::{config_hash, worker_pool, Cell, HarnessError, RunConfig, Tabular};
use crate::harmonics::SphereDim;
use crate::netgdp::{
    init_network, kernel_train, population_risk, train, Backend, GdpConfig, KernelModelState, NetworkState, TrainTrace,
};
use crate::ntk::{spectrum_closed_form, spectrum_quadrature_default, NtkError};
use crate::select::{select_degree, LossMode, SelectConfig, SelectionReport};
use crate::spectral::{build_gram, eigendecompose, projector};
use crate::target::make_training_set;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub config: RunConfig,
    /// Resolved rank and step count.
    pub r: usize,
    #[serde(rename = "T")]
    pub steps: usize,
    pub final_train_loss: f64,
    pub risk_mean: f64,
    pub risk_se: f64,
    /// `d^{k0} / n`.
    pub rate_reference: f64,
    pub loss_quarter: f64,
    pub loss_half: f64,
    pub loss_final: f64,
    /// Largest `max_r ‖w_r(t) - w_r(0)‖` over the run (zero for the kernel backend).
    pub max_movement: f64,
    /// `η ĉ_u T / √m` at the end of the run (zero for the kernel backend).
    pub r_bound: f64,
    pub wall_time_s: f64,
}

impl RunRecord {
    /// Equality on every emitted number except wall time.
    pub fn same_result(&self, other: &Self) -> bool {
        let mut a = self.clone();
        a.wall_time_s = other.wall_time_s;
        a == *other
    }
}

impl Tabular for RunRecord {
    fn columns() -> &'static [&'static str] {
        &[
            "config_hash",
            "d",
            "k0",
            "n",
            "m",
            "backend",
            "r",
            "T",
            "eta",
            "kappa",
            "sigma0",
            "gamma0",
            "seed_data",
            "seed_init",
            "seed_noise",
            "seed_mc",
            "seed_poles",
            "N_mc",
            "final_train_loss",
            "risk_mean",
            "risk_se",
            "rate_reference",
            "loss_quarter",
            "loss_half",
            "loss_final",
            "max_movement",
            "r_bound",
            "wall_time_s",
        ]
    }

    fn cells(&self) -> Vec<Cell> {
        let c = &self.config;
        vec![
            Cell::Text(self.config_hash.clone()),
            c.d.into(),
            c.k0.into(),
            c.n.into(),
            c.m.into(),
            Cell::Text(backend_name(c.backend).into()),
            self.r.into(),
            self.steps.into(),
            c.eta.into(),
            c.kappa.into(),
            c.sigma0.into(),
            c.gamma0.into(),
            c.seeds.data.into(),
            c.seeds.init.into(),
            c.seeds.noise.into(),
            c.seeds.mc.into(),
            c.seeds.poles.into(),
            c.n_mc.into(),
            self.final_train_loss.into(),
            self.risk_mean.into(),
            self.risk_se.into(),
            self.rate_reference.into(),
            self.loss_quarter.into(),
            self.loss_half.into(),
            self.loss_final.into(),
            self.max_movement.into(),
            self.r_bound.into(),
            self.wall_time_s.into(),
        ]
    }
}

pub(crate) fn backend_name(b: Backend) -> &'static str {
    match b {
        Backend::FiniteWidth => "finite_width",
        Backend::KernelExact => "kernel_exact",
    }
}

/// Everything a run produced, for callers that need more than the record.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub record: RunRecord,
    pub trace: TrainTrace,
    pub network: Option<NetworkState>,
    pub kernel_model: Option<KernelModelState>,
}

/// Builds target, data, Gram matrix and projector, trains, and estimates the risk.
pub fn run_one(cfg: &RunConfig) -> Result<RunRecord, HarnessError> {
    run_one_detailed(cfg).map(|a| a.record)
}

pub fn run_one_detailed(cfg: &RunConfig) -> Result<RunArtifacts, HarnessError> {
    let label = || format!("{} (d = {}, n = {}, seeds = {:?})", config_hash(cfg), cfg.d, cfg.n, cfg.seeds);
    run_inner(cfg).map_err(|e| HarnessError::Run {
        label: label(),
        source: Box::new(e),
    })
}

fn run_inner(cfg: &RunConfig) -> Result<RunArtifacts, HarnessError> {
    let started = Instant::now();
    cfg.validate()?;
    let d = cfg.sphere_dim()?;
    let spectrum = spectrum_closed_form(d, cfg.k0 + 1);
    let target = cfg.target_spec().build(d, &spectrum)?;
    let ts = make_training_set(&target, cfg.n, cfg.sigma0, cfg.seeds.data, cfg.seeds.noise)?;
    let eigen = Arc::new(eigendecompose(&build_gram(ts.features.view())?)?);
    let r = cfg.resolved_rank()?;
    let steps = cfg.resolved_steps();
    let p = projector(eigen, r)?;
    let gdp = GdpConfig::new(cfg.eta, steps, r, cfg.backend);

    let (trace, network, kernel_model, risk) = match cfg.backend {
        Backend::KernelExact => {
            let (model, trace) = kernel_train(&ts, &p, &gdp)?;
            let risk = population_risk(&model, &target, cfg.n_mc, cfg.seeds.mc)?;
            (trace, None, Some(model), risk)
        }
        Backend::FiniteWidth => {
            let m = cfg.m.ok_or_else(|| HarnessError::Config("finite_width backend needs the width m".into()))?;
            let net = init_network(m, d, cfg.kappa, cfg.seeds.init)?;
            let (net, trace) = train(net, &ts, &p, &gdp)?;
            let risk = population_risk(&net, &target, cfg.n_mc, cfg.seeds.mc)?;
            (trace, Some(net), None, risk)
        }
    };

    let record = RunRecord {
        config_hash: config_hash(cfg),
        config: cfg.clone(),
        r,
        steps,
        final_train_loss: trace.final_loss(),
        risk_mean: risk.mean,
        risk_se: risk.se,
        rate_reference: (cfg.d as f64).powi(cfg.k0 as i32) / cfg.n as f64,
        loss_quarter: trace.loss_at(steps / 4),
        loss_half: trace.loss_at(steps / 2),
        loss_final: trace.final_loss(),
        max_movement: trace.max_movement.iter().fold(0.0, |a: f64, &b| a.max(b)),
        r_bound: *trace.r_bound.last().unwrap_or(&0.0),
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    log::info!(
        "run {}: n = {}, r = {}, T = {steps}, risk = {:e} ({:.2} s)",
        record.config_hash,
        cfg.n,
        record.r,
        record.risk_mean,
        record.wall_time_s
    );
    Ok(RunArtifacts {
        record,
        trace,
        network,
        kernel_model,
    })
}

/// Runs independent configs on a pool of `jobs` workers; results come back in input order.
pub fn run_many(configs: &[RunConfig], jobs: usize) -> Result<Vec<Result<RunRecord, HarnessError>>, HarnessError> {
    let pool = worker_pool(jobs)?;
    Ok(pool.install(|| configs.par_iter().map(run_one).collect()))
}

/// GDP at the configured rank against vanilla gradient descent (`r = n`) on the
/// same data, for `replicates` seed replicates. Pairs are `(gdp, vanilla)`.
pub fn paired_baseline(
    base: &RunConfig,
    replicates: usize,
    jobs: usize,
) -> Result<Vec<(RunRecord, RunRecord)>, HarnessError> {
    let mut configs = Vec::with_capacity(2 * replicates);
    for i in 0..replicates {
        let mut gdp = base.clone();
        gdp.seeds = replicate_seeds(base.seeds, i as u64);
        let mut vanilla = gdp.clone();
        vanilla.r = Some(base.n);
        configs.push(gdp);
        configs.push(vanilla);
    }
    let mut out = run_many(&configs, jobs)?.into_iter();
    let mut pairs = Vec::with_capacity(replicates);
    while let (Some(a), Some(b)) = (out.next(), out.next()) {
        pairs.push((a?, b?));
    }
    Ok(pairs)
}

/// Degree selection on the training set described by `cfg`.
///
/// `cfg.eta`, `cfg.backend`, `cfg.m`, `cfg.kappa` and `cfg.seeds.init` configure
/// the per-level GDP runs; `T` and `r` are ignored since every level sets its own.
pub fn select_from_config(
    cfg: &RunConfig,
    start_degree: usize,
    beta0: f64,
    loss_mode: LossMode,
    epsilon0: Option<f64>,
) -> Result<SelectionReport, HarnessError> {
    let mut check = cfg.clone();
    check.r = Some(1);
    check.validate()?;
    let d = cfg.sphere_dim()?;
    let spectrum = spectrum_closed_form(d, start_degree.max(cfg.k0) + 2);
    let target = cfg.target_spec().build(d, &spectrum)?;
    let ts = make_training_set(&target, cfg.n, cfg.sigma0, cfg.seeds.data, cfg.seeds.noise)?;
    let sel = SelectConfig {
        start_degree,
        beta0,
        eta: cfg.eta,
        backend: cfg.backend,
        loss_mode,
        m: cfg.m,
        kappa: Some(cfg.kappa),
        init_seed: cfg.seeds.init,
        epsilon0,
    };
    Ok(select_degree(&ts, &spectrum, &sel)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub d: usize,
    pub degree: usize,
    pub lambda0: f64,
    pub lambda1: f64,
    pub mu_closed: f64,
    pub mu_quad: f64,
    pub rel_err: f64,
}

impl Tabular for SpectrumRow {
    fn columns() -> &'static [&'static str] {
        &["d", "degree", "lambda0", "lambda1", "mu_closed", "mu_quad", "rel_err"]
    }

    fn cells(&self) -> Vec<Cell> {
        vec![
            self.d.into(),
            self.degree.into(),
            self.lambda0.into(),
            self.lambda1.into(),
            self.mu_closed.into(),
            self.mu_quad.into(),
            self.rel_err.into(),
        ]
    }
}

/// Closed-form spectrum next to the quadrature one, for each `d` and degree `0..=max_degree`.
pub fn spectrum_table(dims: &[usize], max_degree: usize) -> Result<Vec<SpectrumRow>, HarnessError> {
    let mut rows = Vec::new();
    for &d in dims {
        let dim = SphereDim::new(d).map_err(|e| HarnessError::Config(e.to_string()))?;
        let closed = spectrum_closed_form(dim, max_degree);
        let quad = spectrum_quadrature_default(dim, max_degree)
            .map_err(|e: NtkError| HarnessError::Config(e.to_string()))?;
        for degree in 0..=max_degree {
            let (mc, mq) = (closed.mu[degree], quad.mu[degree]);
            rows.push(SpectrumRow {
                d,
                degree,
                lambda0: closed.lambda0[degree],
                lambda1: closed.lambda1[degree],
                mu_closed: mc,
                mu_quad: mq,
                rel_err: (mq - mc).abs() / mc.abs(),
            });
        }
    }
    Ok(rows)
}
