//! Acceptance suite. Each criterion prints one `PASS` / `FAIL` line; the process
//! exits non-zero if any criterion fails. Pass criterion numbers as arguments to
//! run a subset, e.g. `cargo test --test acceptance -- 1 4`.

use std::sync::Arc;
use std::time::Instant;

use gdp_sphere::harmonics::{cumulative_dim, sample_sphere, SphereDim};
use gdp_sphere::harness::{rate_sweep, run_one_detailed, uniform_convergence_audit, RunConfig};
use gdp_sphere::netgdp::{init_network, kernel_train, train, write_checkpoint, Backend, GdpConfig, TrainTrace};
use gdp_sphere::ntk::{spectrum_closed_form, spectrum_quadrature_default};
use gdp_sphere::select::{select_degree, LossMode, SelectConfig};
use gdp_sphere::spectral::{build_gram, eigendecompose, projector};
use gdp_sphere::target::{make_training_set, make_zonal_target, TrainingSet};
use ndarray::Array1;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn dim(d: usize) -> SphereDim {
    SphereDim::new(d).unwrap()
}

fn spectrum_agreement() -> Outcome {
    let mut worst: f64 = 0.0;
    for d in [3, 5, 10, 20] {
        let closed = spectrum_closed_form(dim(d), 6);
        let quad = spectrum_quadrature_default(dim(d), 6).unwrap();
        for (a, b) in closed.mu.iter().zip(&quad.mu) {
            worst = worst.max((a - b).abs() / a.abs());
        }
    }
    let d3 = spectrum_closed_form(dim(3), 1);
    let q3 = spectrum_quadrature_default(dim(3), 1).unwrap();
    let hand = [
        (d3.mu[0], 5.0 / 16.0),
        (q3.mu[0], 5.0 / 16.0),
        (d3.lambda0[1], 1.0 / 16.0),
        (q3.lambda0[1], 1.0 / 16.0),
    ];
    let hand_err = hand.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    outcome(
        worst <= 1e-6 && hand_err <= 1e-10,
        format!("max rel err {worst:.2e}, hand-value err {hand_err:.2e}"),
    )
}

fn eigenvalue_decay() -> Outcome {
    let dims = [10usize, 20, 40];
    let spectra: Vec<_> = dims.iter().map(|&d| spectrum_closed_form(dim(d), 3)).collect();
    let mut worst: f64 = 0.0;
    for k in 1..=3 {
        let scaled: Vec<f64> = dims
            .iter()
            .zip(&spectra)
            .map(|(&d, s)| s.mu[k] * (d as f64).powi(k as i32))
            .collect();
        let hi = scaled.iter().cloned().fold(f64::MIN, f64::max);
        let lo = scaled.iter().cloned().fold(f64::MAX, f64::min);
        worst = worst.max(hi / lo);
    }
    outcome(worst < 4.0, format!("max spread of mu_k d^k {worst:.3}"))
}

fn zero_init() -> Outcome {
    let d = dim(5);
    let mut worst: f64 = 0.0;
    for m in [1 << 6, 1 << 10, 1 << 14] {
        for seed in 0..5 {
            let net = init_network(m, d, 1.0, seed).unwrap();
            let probes = sample_sphere(d, 1000, 77 + seed);
            let out = net.forward(probes.view()).unwrap();
            worst = worst.max(out.iter().fold(0.0f64, |a, v| a.max(v.abs())));
        }
    }
    outcome(worst <= 1e-10, format!("max |f_0(x)| {worst:.2e}"))
}

fn projector_algebra() -> Outcome {
    let d = dim(5);
    let r0 = cumulative_dim(d, 1).unwrap() as usize;
    let mut algebra: f64 = 0.0;
    let mut drift: f64 = 0.0;
    for n in [32, 256] {
        let spectrum = spectrum_closed_form(d, 2);
        let target = make_zonal_target(d, 1, &[0.2, 0.2], 1.0, &spectrum, n as u64).unwrap();
        let ts = make_training_set(&target, n, 0.3, 1, 2).unwrap();
        let eigen = Arc::new(eigendecompose(&build_gram(ts.features.view()).unwrap()).unwrap());
        for r in [1, r0, n] {
            let p = projector(eigen.clone(), r).unwrap();
            let dense = p.dense();
            let idem = (&dense.dot(&dense) - &dense).iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let sym = (&dense - &dense.t()).iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let trace = (dense.diag().sum() - r as f64).abs();
            algebra = algebra.max(idem).max(sym).max(trace);
        }
        let p = projector(eigen.clone(), r0).unwrap();
        let mut cfg = GdpConfig::new(0.5, 200, r0, Backend::KernelExact);
        cfg.record_residuals = true;
        let (state, _) = kernel_train(&ts, &p, &cfg).unwrap();
        let start = p.trailing_coords(state.history[0].view()).unwrap();
        for u in &state.history {
            let now = p.trailing_coords(u.view()).unwrap();
            drift = drift.max((&now - &start).iter().fold(0.0f64, |a, v| a.max(v.abs())));
        }
    }
    outcome(
        algebra <= 1e-8 && drift <= 1e-10,
        format!("max algebra defect {algebra:.2e}, trailing drift {drift:.2e}"),
    )
}

const LAZY_WIDTHS: [usize; 3] = [1 << 12, 1 << 14, 1 << 16];

struct LazyRuns {
    /// Mean relative deviation per width.
    deviation: Vec<f64>,
    traces: Vec<TrainTrace>,
}

fn lazy_problem(seed: u64) -> TrainingSet {
    let d = dim(5);
    let spectrum = spectrum_closed_form(d, 2);
    let target = make_zonal_target(d, 1, &[0.2, 0.2], 1.0, &spectrum, 500 + seed).unwrap();
    make_training_set(&target, 64, 0.1, 600 + seed, 700 + seed).unwrap()
}

fn lazy_runs() -> LazyRuns {
    let d = dim(5);
    let r0 = cumulative_dim(d, 1).unwrap() as usize;
    let seeds = 5;
    let mut deviation = vec![0.0; LAZY_WIDTHS.len()];
    let mut traces = Vec::new();
    for seed in 0..seeds {
        let ts = lazy_problem(seed);
        let eigen = Arc::new(eigendecompose(&build_gram(ts.features.view()).unwrap()).unwrap());
        let p = projector(eigen, r0).unwrap();
        let (kernel, _) = kernel_train(&ts, &p, &GdpConfig::new(0.5, 50, r0, Backend::KernelExact)).unwrap();
        let reference = kernel.u.dot(&kernel.u).sqrt();
        for (i, &m) in LAZY_WIDTHS.iter().enumerate() {
            let net = init_network(m, d, 1.0, 900 + seed).unwrap();
            let (net, trace) = train(net, &ts, &p, &GdpConfig::new(0.5, 50, r0, Backend::FiniteWidth)).unwrap();
            let u: Array1<f64> = net.forward(ts.features.view()).unwrap() - &ts.y;
            let diff = &u - &kernel.u;
            deviation[i] += diff.dot(&diff).sqrt() / reference / seeds as f64;
            traces.push(trace);
        }
    }
    LazyRuns { deviation, traces }
}

fn lazy_equivalence(runs: &LazyRuns) -> Outcome {
    let dev = &runs.deviation;
    let monotone = dev.windows(2).all(|w| w[1] <= w[0]);
    outcome(
        dev[dev.len() - 1] <= 0.1 && monotone,
        format!("mean relative deviation at m = 2^12, 2^14, 2^16: {dev:.4?}"),
    )
}

fn movement_envelope(runs: &LazyRuns) -> Outcome {
    let mut worst: f64 = 0.0;
    for trace in &runs.traces {
        for (mv, bound) in trace.max_movement.iter().zip(&trace.r_bound).skip(1) {
            worst = worst.max(mv / bound);
        }
    }
    outcome(
        worst <= 1.0,
        format!("max movement / bound {worst:.4} over {} runs", runs.traces.len()),
    )
}

fn uniform_scaling() -> Outcome {
    let widths: Vec<usize> = (0..4).map(|i| 1 << (10 + 2 * i)).collect();
    let seeds: Vec<u64> = (0..10).collect();
    let audit = uniform_convergence_audit(5, &widths, 50, &seeds, 1.0, &[]).unwrap();
    let errors = audit.mean_kernel_error();
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[0].1 / w[1].1).collect();
    let pass = ratios.iter().all(|r| (1.3..=3.0).contains(r));
    outcome(pass, format!("error ratio per width quadrupling {ratios:.3?}"))
}

fn rate_reproduction() -> Outcome {
    let d = 10;
    let mu1 = spectrum_closed_form(dim(d), 1).mu[1];
    let mut base = RunConfig::kernel(d, 1, 500, 0.5, 1.0, vec![0.0, mu1.sqrt()]);
    base.r = Some(11);
    let sweep = rate_sweep(&base, &[500, 1000, 2000, 4000], 10, 0).unwrap();
    let risks: Vec<String> = sweep.points.iter().map(|p| format!("{:.3e}", p.risk_mean)).collect();
    outcome(
        (-1.25..=-0.75).contains(&sweep.slope),
        format!("slope {:.3}, risks {}", sweep.slope, risks.join(" ")),
    )
}

fn degree_selection() -> Outcome {
    let d = dim(6);
    let beta0 = 0.25;
    let spectrum = spectrum_closed_form(d, 6);
    let energies: Vec<f64> = (0..=2).map(|l| 2.0 * beta0 * spectrum.mu[l].sqrt()).collect();
    let target = make_zonal_target(d, 2, &energies, 1.0, &spectrum, 31).unwrap();
    let cfg = SelectConfig::kernel(4, beta0, LossMode::Clean);
    let mut chosen = Vec::new();
    let mut level2 = Vec::new();
    for seed in 0..10 {
        let ts = make_training_set(&target, 4000, 0.1, 1000 + seed, 2000 + seed).unwrap();
        let report = select_degree(&ts, &spectrum, &cfg).unwrap();
        if let Some(rec) = report.per_level.iter().find(|r| r.ell == 2) {
            level2.push(rec.ratio / (beta0 * beta0));
        }
        chosen.push(report.chosen_degree);
    }
    let hits = chosen.iter().filter(|c| **c == Some(2)).count();
    let mean_ratio = level2.iter().sum::<f64>() / level2.len().max(1) as f64;
    outcome(
        hits >= 9,
        format!("chosen = 2 in {hits}/10 seeds {chosen:?}; mean E_2/(mu_3 beta0^2) {mean_ratio:.2} vs 1/8 needed"),
    )
}

fn determinism() -> Outcome {
    let mut kernel_cfg = RunConfig::kernel(5, 1, 120, 0.3, 1.0, vec![0.1, 0.2]);
    kernel_cfg.n_mc = 2000;
    let mut finite_cfg = kernel_cfg.clone();
    finite_cfg.backend = Backend::FiniteWidth;
    finite_cfg.m = Some(512);
    finite_cfg.steps = Some(20);
    let mut same = true;
    for cfg in [&kernel_cfg, &finite_cfg] {
        let a = run_one_detailed(cfg).unwrap();
        let b = run_one_detailed(cfg).unwrap();
        same &= a.record.same_result(&b.record);
        let bits = |t: &TrainTrace| {
            [&t.loss, &t.residual_norm, &t.max_movement, &t.r_bound]
                .iter()
                .flat_map(|v| v.iter().map(|x| x.to_bits()))
                .collect::<Vec<_>>()
        };
        same &= bits(&a.trace) == bits(&b.trace);
        if let (Some(na), Some(nb)) = (&a.network, &b.network) {
            let (mut ba, mut bb) = (Vec::new(), Vec::new());
            write_checkpoint(na, &mut ba).unwrap();
            write_checkpoint(nb, &mut bb).unwrap();
            same &= ba == bb;
        }
        if let (Some(ka), Some(kb)) = (&a.kernel_model, &b.kernel_model) {
            same &= ka.alpha.iter().zip(&kb.alpha).all(|(x, y)| x.to_bits() == y.to_bits());
        }
    }
    outcome(same, "kernel and finite-width runs repeated")
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |k: usize| wanted.is_empty() || wanted.contains(&k);
    let mut failed = 0;
    let mut report = |k: usize, name: &str, run: &mut dyn FnMut() -> Outcome| {
        if !want(k) {
            return;
        }
        let start = Instant::now();
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {k:>2} {verdict} {name} ({:.1} s): {}",
            start.elapsed().as_secs_f64(),
            o.detail
        );
    };

    report(1, "spectrum cross-validation", &mut spectrum_agreement);
    report(2, "eigenvalue decay", &mut eigenvalue_decay);
    report(3, "exact-zero initialization", &mut zero_init);
    report(4, "projector algebra", &mut projector_algebra);
    let mut lazy: Option<LazyRuns> = None;
    report(5, "lazy-regime equivalence", &mut || lazy_equivalence(lazy.get_or_insert_with(lazy_runs)));
    report(6, "uniform convergence scaling", &mut uniform_scaling);
    report(7, "rate reproduction", &mut rate_reproduction);
    report(8, "degree selection", &mut degree_selection);
    report(9, "weight-movement envelope", &mut || movement_envelope(lazy.get_or_insert_with(lazy_runs)));
    report(10, "determinism", &mut determinism);

    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
