use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use gdp_sphere::harness::{
    defaults, emit, loglog_svg, rate_sweep, run_one_detailed, select_from_config, spectrum_table,
    uniform_convergence_audit, write_json, Cell, Format, HarnessError, RunConfig, Tabular,
};
use gdp_sphere::netgdp::{save_checkpoint, Backend, TrainTrace};
use gdp_sphere::select::LossMode;

#[derive(Parser)]
#[command(name = "gdp-sphere", version, about = "GDP training of two-layer ReLU networks on the sphere")]
struct Cli {
    /// Worker threads for independent runs (0 = one per logical core).
    #[arg(long, global = true, env = "GDP_SPHERE_JOBS", default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// NTK eigenvalues: closed form against quadrature.
    Spectrum(SpectrumArgs),
    /// One training run.
    Train(TrainArgs),
    /// Risk against sample size, with the fitted log-log slope.
    Sweep(SweepArgs),
    /// Adaptive degree selection.
    SelectDegree(SelectArgs),
    /// Finite-width kernel estimators against their limits.
    CheckUniform(UniformArgs),
}

#[derive(Args)]
struct SpectrumArgs {
    #[arg(long, value_delimiter = ',', default_values_t = vec![3, 5, 10, 20])]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 6)]
    max_degree: usize,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    FiniteWidth,
    KernelExact,
}

impl BackendArg {
    fn name(self) -> &'static str {
        match self {
            BackendArg::FiniteWidth => "finite_width",
            BackendArg::KernelExact => "kernel_exact",
        }
    }
}

/// Run config: a JSON file plus per-field overrides.
#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: the config's output_path, else the current directory).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    k0: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    /// Step count T.
    #[arg(long = "steps")]
    steps: Option<usize>,
    /// Projection rank r.
    #[arg(long = "rank")]
    rank: Option<usize>,
    #[arg(long)]
    sigma0: Option<f64>,
    #[arg(long)]
    gamma0: Option<f64>,
    /// Comma-separated c_0, ..., c_k0.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    energies: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    #[arg(long)]
    n_mc: Option<usize>,
    #[arg(long)]
    seed_data: Option<u64>,
    #[arg(long)]
    seed_init: Option<u64>,
    #[arg(long)]
    seed_noise: Option<u64>,
    #[arg(long)]
    seed_mc: Option<u64>,
    #[arg(long)]
    seed_poles: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Write the trained network here (finite_width backend only).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
    #[arg(long)]
    seeds_per_n: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossModeArg {
    Clean,
    Debiased,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Start degree L.
    #[arg(long)]
    start_degree: Option<usize>,
    #[arg(long)]
    beta0: Option<f64>,
    #[arg(long, value_enum)]
    loss_mode: Option<LossModeArg>,
    /// Recorded in the summary; the decision rule does not use it.
    #[arg(long)]
    epsilon0: Option<f64>,
}

#[derive(Args)]
struct UniformArgs {
    #[arg(long)]
    d: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    m_grid: Option<Vec<usize>>,
    #[arg(long)]
    probes: Option<usize>,
    /// Number of seeds; seed i uses base + i.
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed_base: u64,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    radii: Option<Vec<f64>>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Every variant's message already includes its cause.
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), HarnessError> {
    match &cli.command {
        Command::Spectrum(a) => cmd_spectrum(a),
        Command::Train(a) => cmd_train(a),
        Command::Sweep(a) => cmd_sweep(a, cli.jobs),
        Command::SelectDegree(a) => cmd_select(a),
        Command::CheckUniform(a) => cmd_uniform(a),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> HarnessError {
    HarnessError::Io {
        path: path.to_owned(),
        source: e,
    }
}

fn prepare_dir(dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// Writes `config_echo.json`: the command line plus the fully resolved parameters.
fn write_echo(dir: &Path, command: &str, params: Value) -> Result<(), HarnessError> {
    let echo = json!({
        "command": command,
        "argv": std::env::args().collect::<Vec<_>>(),
        "defaults_version": defaults().version,
        "params": params,
    });
    write_json(&echo, &dir.join("config_echo.json"))
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, HarnessError> {
        let mut obj = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
                match serde_json::from_str::<Value>(&text) {
                    Ok(Value::Object(map)) => map,
                    Ok(_) => return Err(HarnessError::Config(format!("{}: expected a JSON object", path.display()))),
                    Err(e) => return Err(HarnessError::Config(format!("{}: {e}", path.display()))),
                }
            }
            None => Map::new(),
        };
        let mut set = |key: &str, v: Option<Value>| {
            if let Some(v) = v {
                obj.insert(key.to_owned(), v);
            }
        };
        set("d", self.d.map(Value::from));
        set("n", self.n.map(Value::from));
        set("m", self.m.map(Value::from));
        set("kappa", self.kappa.map(Value::from));
        set("eta", self.eta.map(Value::from));
        set("T", self.steps.map(Value::from));
        set("r", self.rank.map(Value::from));
        set("sigma0", self.sigma0.map(Value::from));
        set("backend", self.backend.map(|b| Value::from(b.name())));
        set("N_mc", self.n_mc.map(Value::from));

        // Target fields live either at top level or in a nested `target` object.
        if let Some(Value::Object(target)) = obj.get_mut("target") {
            let mut put = |key: &str, v: Option<Value>| {
                if let Some(v) = v {
                    target.insert(key.to_owned(), v);
                }
            };
            put("k0", self.k0.map(Value::from));
            put("gamma0", self.gamma0.map(Value::from));
            put("energies", self.energies.clone().map(Value::from));
            put("pole_seed", self.seed_poles.map(Value::from));
        } else {
            let mut put = |key: &str, v: Option<Value>| {
                if let Some(v) = v {
                    obj.insert(key.to_owned(), v);
                }
            };
            put("k0", self.k0.map(Value::from));
            put("gamma0", self.gamma0.map(Value::from));
            put("degree_energies", self.energies.clone().map(Value::from));
        }

        let seeds = obj.entry("seeds").or_insert_with(|| {
            let s = gdp_sphere::harness::Seeds::default();
            json!({"data": s.data, "init": s.init, "noise": s.noise, "mc": s.mc, "poles": s.poles})
        });
        if let Value::Object(seeds) = seeds {
            for (key, v) in [
                ("data", self.seed_data),
                ("init", self.seed_init),
                ("noise", self.seed_noise),
                ("mc", self.seed_mc),
                ("poles", self.seed_poles),
            ] {
                if let Some(v) = v {
                    seeds.insert(key.to_owned(), Value::from(v));
                }
            }
        }
        let cfg: RunConfig = serde_json::from_value(Value::Object(obj)).map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &RunConfig) -> PathBuf {
        self.out
            .clone()
            .or_else(|| cfg.output_path.clone())
            .unwrap_or_else(|| PathBuf::from("."))
    }
}

fn cmd_spectrum(a: &SpectrumArgs) -> Result<(), HarnessError> {
    prepare_dir(&a.out)?;
    let rows = spectrum_table(&a.dims, a.max_degree)?;
    emit(&rows, &a.out.join("spectrum.csv"), Format::Csv)?;
    write_echo(&a.out, "spectrum", json!({"dims": a.dims, "max_degree": a.max_degree}))
}

struct TraceRow<'a>(usize, &'a TrainTrace);

impl Tabular for TraceRow<'_> {
    fn columns() -> &'static [&'static str] {
        &["t", "loss", "residual_norm", "max_movement", "r_bound"]
    }

    fn cells(&self) -> Vec<Cell> {
        let (t, tr) = (self.0, self.1);
        vec![
            t.into(),
            tr.loss[t].into(),
            tr.residual_norm[t].into(),
            tr.max_movement[t].into(),
            tr.r_bound[t].into(),
        ]
    }
}

fn cmd_train(a: &TrainArgs) -> Result<(), HarnessError> {
    let cfg = a.cfg.resolve()?;
    cfg.validate()?;
    if a.checkpoint.is_some() && cfg.backend != Backend::FiniteWidth {
        return Err(HarnessError::Config("--checkpoint needs the finite_width backend".into()));
    }
    let dir = a.cfg.out_dir(&cfg);
    prepare_dir(&dir)?;
    write_echo(&dir, "train", json!({"config": cfg, "checkpoint": a.checkpoint}))?;
    let art = run_one_detailed(&cfg)?;
    write_json(&art.record, &dir.join("record.json"))?;
    emit(std::slice::from_ref(&art.record), &dir.join("record.csv"), Format::Csv)?;
    let rows: Vec<TraceRow> = (0..art.trace.len()).map(|t| TraceRow(t, &art.trace)).collect();
    emit(&rows, &dir.join("trace.csv"), Format::Csv)?;
    if let (Some(path), Some(net)) = (&a.checkpoint, &art.network) {
        save_checkpoint(net, path).map_err(|e| match e {
            gdp_sphere::netgdp::NetError::Io(io) => io_err(path, io),
            other => HarnessError::Net(other),
        })?;
    }
    println!(
        "risk = {:.6e} ± {:.2e}, final training loss = {:.6e}",
        art.record.risk_mean, art.record.risk_se, art.record.final_train_loss
    );
    Ok(())
}

fn cmd_sweep(a: &SweepArgs, jobs: usize) -> Result<(), HarnessError> {
    let cfg = a.cfg.resolve()?;
    let grid = a.n_grid.clone().unwrap_or_else(|| defaults().sweep.n_grid.clone());
    let seeds_per_n = a.seeds_per_n.unwrap_or(defaults().sweep.seeds_per_n);
    for &n in &grid {
        let mut c = cfg.clone();
        c.n = n;
        c.validate()?;
    }
    let dir = a.cfg.out_dir(&cfg);
    prepare_dir(&dir)?;
    write_echo(
        &dir,
        "sweep",
        json!({"config": cfg, "n_grid": grid, "seeds_per_n": seeds_per_n, "jobs": jobs}),
    )?;
    let result = rate_sweep(&cfg, &grid, seeds_per_n, jobs)?;
    emit(&result.points, &dir.join("sweep.csv"), Format::Csv)?;
    emit(&result.records, &dir.join("runs.csv"), Format::Csv)?;
    write_json(
        &json!({"slope": result.slope, "intercept": result.intercept, "n_grid": grid, "seeds_per_n": seeds_per_n}),
        &dir.join("summary.json"),
    )?;
    let pts: Vec<(f64, f64)> = result.points.iter().map(|p| (p.n as f64, p.risk_mean)).collect();
    let svg_path = dir.join("risk_vs_n.svg");
    std::fs::write(&svg_path, loglog_svg(&pts, "population risk vs n", "n", "risk")).map_err(|e| io_err(&svg_path, e))?;
    println!("slope = {:.4}", result.slope);
    Ok(())
}

fn cmd_select(a: &SelectArgs) -> Result<(), HarnessError> {
    let cfg = a.cfg.resolve()?;
    let d = defaults();
    let start = a.start_degree.unwrap_or(d.select.start_degree);
    let beta0 = a.beta0.unwrap_or(d.select.beta0);
    let mode = match a.loss_mode {
        Some(LossModeArg::Clean) => LossMode::Clean,
        Some(LossModeArg::Debiased) => LossMode::Debiased,
        None => d.select.loss_mode,
    };
    let dir = a.cfg.out_dir(&cfg);
    prepare_dir(&dir)?;
    write_echo(
        &dir,
        "select-degree",
        json!({"config": cfg, "start_degree": start, "beta0": beta0, "loss_mode": mode, "epsilon0": a.epsilon0}),
    )?;
    let report = select_from_config(&cfg, start, beta0, mode, a.epsilon0)?;
    emit(&report.per_level, &dir.join("ratio_table.csv"), Format::Csv)?;
    write_json(
        &json!({
            "chosen_degree": report.chosen_degree,
            "triggered_level": report.triggered_level,
            "seeds": cfg.seeds,
            "thresholds": report.thresholds,
            "loss_mode": report.loss_mode,
            "epsilon0": a.epsilon0,
        }),
        &dir.join("selection.json"),
    )?;
    match report.chosen_degree {
        Some(k) => println!("chosen degree = {k}"),
        None => println!("no degree selected"),
    }
    Ok(())
}

fn cmd_uniform(a: &UniformArgs) -> Result<(), HarnessError> {
    let u = &defaults().uniform;
    let d = a.d.unwrap_or(u.d);
    let grid = a.m_grid.clone().unwrap_or_else(|| u.m_grid.clone());
    let probes = a.probes.unwrap_or(u.n_probes);
    let count = a.seeds.unwrap_or(u.seeds) as u64;
    let kappa = a.kappa.unwrap_or(u.kappa);
    let radii = a.radii.clone().unwrap_or_else(|| u.radii.clone());
    let seeds: Vec<u64> = (0..count).map(|i| a.seed_base.wrapping_add(i)).collect();
    prepare_dir(&a.out)?;
    write_echo(
        &a.out,
        "check-uniform",
        json!({"d": d, "m_grid": grid, "probes": probes, "seeds": seeds, "kappa": kappa, "radii": radii}),
    )?;
    let audit = uniform_convergence_audit(d, &grid, probes, &seeds, kappa, &radii)?;
    emit(&audit.rows, &a.out.join("uniform.csv"), Format::Csv)?;
    for (m, e) in audit.mean_kernel_error() {
        println!("m = {m}: mean sup error {e:.4e}");
    }
    Ok(())
}
