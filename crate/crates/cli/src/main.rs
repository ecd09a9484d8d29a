//! `glassy`: simulate ensembles, evaluate the closed forms, run parameter scans.
//!
//! Exit codes: 0 on success, 2 on invalid input, 3 when random sequential
//! adsorption cannot place every spin, 1 for anything else.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use glassy_core::analytic::{analytic_curve, gamma_moment, rates, rates_with_anisotropy, ModelParameters};
use glassy_core::couplings::{median_nn_coupling, Anisotropy, CouplingModel};
use glassy_core::dynamics::{
    ensemble_average, realization, spin_histogram, spin_trajectories_with, CurveMeta, EnsembleTask, GridSpec,
    Observable, RelaxationCurve, TimeGrid,
};
use glassy_core::ensemble::BallGeometry;
use glassy_core::fitting::{
    default_p_table_cases, rb_set_for, scan_beta_vs_disorder, scan_beta_vs_n, scan_p_table, ScanResult, ScanSettings,
};
use glassy_core::{Error, Execution};
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(name = "glassy", version, about = "Glassy relaxation of the disordered power-law Ising model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ensemble-averaged curves, per-spin samples and histograms.
    #[command(args_override_self = true)]
    Simulate(SimulateArgs),
    /// Thermodynamic-limit rates and curves.
    #[command(args_override_self = true)]
    Analytic(AnalyticArgs),
    /// Stretch-power scans over disorder, system size, or the full table.
    #[command(args_override_self = true)]
    Scan(ScanArgs),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Master seed for every random stream.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Run without the thread pool.
    #[arg(long)]
    sequential: bool,
    /// `key = value` file with defaults for any long flag. Flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct Grid {
    /// First time in units of 1 / J_NN.
    #[arg(long, default_value_t = 1e-2)]
    tmin: f64,
    /// Last time in units of 1 / J_NN.
    #[arg(long, default_value_t = 1e2)]
    tmax: f64,
    #[arg(long, default_value_t = 200)]
    points: usize,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    grid: Grid,
    #[arg(long)]
    d: usize,
    #[arg(long)]
    alpha: f64,
    /// Spins per realization.
    #[arg(long = "N")]
    n: usize,
    /// Number of realizations.
    #[arg(long = "Ns", default_value_t = 1)]
    ns: usize,
    /// Packing ratio `N rb^d / r0^d`.
    #[arg(long, conflicts_with = "rb")]
    x: Option<f64>,
    /// Exclusion radius; overrides the default `x = 0`.
    #[arg(long)]
    rb: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    r0: f64,
    #[arg(long = "c-alpha", default_value_t = 1.0)]
    c_alpha: f64,
    /// `isotropic`, `dipolar` or `constant:<c>`.
    #[arg(long, default_value = "isotropic")]
    anisotropy: String,
    /// Extra moments `<sigma_x^j>`, comma separated.
    #[arg(long, value_delimiter = ',')]
    moments: Vec<u32>,
    /// Histogram times in units of 1 / J_NN, comma separated.
    #[arg(long = "hist-times", value_delimiter = ',')]
    hist_times: Vec<f64>,
    #[arg(long = "hist-bins", default_value_t = 40)]
    hist_bins: usize,
    /// Spins of the first realization written out individually.
    #[arg(long = "sample-spins", default_value_t = 8)]
    sample_spins: usize,
}

#[derive(Args, Debug)]
struct AnalyticArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    grid: Grid,
    #[arg(long)]
    d: usize,
    #[arg(long)]
    alpha: f64,
    /// Spin density.
    #[arg(long, default_value_t = 1.0)]
    density: f64,
    #[arg(long = "c-alpha", default_value_t = 1.0)]
    c_alpha: f64,
    #[arg(long, default_value = "isotropic")]
    anisotropy: String,
    #[arg(long, value_delimiter = ',', default_values_t = vec![2u32, 3, 4])]
    moments: Vec<u32>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    #[value(name = "beta-vs-x")]
    BetaVsX,
    #[value(name = "beta-vs-N")]
    BetaVsN,
    #[value(name = "p-table")]
    PTable,
}

#[derive(Args, Debug)]
struct ScanArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    grid: Grid,
    #[arg(long, value_enum)]
    mode: Mode,
    #[arg(long, default_value_t = 3)]
    d: usize,
    #[arg(long, default_value_t = 6.0)]
    alpha: f64,
    /// Spins per realization (beta-vs-x).
    #[arg(long = "N", default_value_t = 100)]
    n: usize,
    #[arg(long = "Ns", default_value_t = 200)]
    ns: usize,
    /// Disorder values (beta-vs-x), comma separated.
    #[arg(long = "x-values", value_delimiter = ',',
          default_values_t = vec![1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 0.1, 0.2, 0.3, 0.4])]
    x_values: Vec<f64>,
    /// System sizes (beta-vs-N), comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = vec![100usize, 200, 400, 800, 1300])]
    sizes: Vec<usize>,
    /// Range of x at the largest size spanned by the exclusion radii (beta-vs-N).
    #[arg(long = "x-min", default_value_t = 1e-4)]
    x_min: f64,
    #[arg(long = "x-max", default_value_t = 1e-2)]
    x_max: f64,
    #[arg(long = "rb-count", default_value_t = 5)]
    rb_count: usize,
    #[arg(long, default_value_t = 1.0)]
    r0: f64,
    #[arg(long = "c-alpha", default_value_t = 1.0)]
    c_alpha: f64,
}

fn main() -> ExitCode {
    let argv = match with_config_defaults(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(argv);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(Error::PackingFailure { .. }) => 3,
        Some(
            Error::InvalidParameter(_)
            | Error::DomainError { .. }
            | Error::InsufficientSpins { .. }
            | Error::TooLarge { .. }
            | Error::Parse(_),
        ) => 2,
        Some(_) => 1,
        None if e.downcast_ref::<Invalid>().is_some() => 2,
        None => 1,
    }
}

/// Validation failure detected in the CLI layer.
#[derive(Debug)]
struct Invalid(String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Invalid(msg.into()))
}

/// Inserts `--key value` pairs from the config file right after the
/// subcommand, so that later flags on the command line override them.
fn with_config_defaults(mut argv: Vec<String>) -> Result<Vec<String>> {
    let mut path = None;
    for (i, a) in argv.iter().enumerate() {
        if let Some(p) = a.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        } else if a == "--config" {
            path = argv.get(i + 1).map(PathBuf::from);
        }
    }
    let Some(path) = path else { return Ok(argv) };
    let text = fs::read_to_string(&path).with_context(|| format!("reading config {}", path.display()))?;
    let mut extra = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("{}:{}: expected `key = value`", path.display(), lineno + 1);
        };
        let (k, v) = (k.trim(), v.trim());
        if k == "config" || k.is_empty() {
            bail!("{}:{}: invalid key `{k}`", path.display(), lineno + 1);
        }
        match v {
            "true" => extra.push(format!("--{k}")),
            "false" => {}
            _ => {
                extra.push(format!("--{k}"));
                extra.push(v.to_string());
            }
        }
    }
    let at = argv.iter().position(|a| ["simulate", "analytic", "scan"].contains(&a.as_str()));
    let at = at.map_or(argv.len(), |i| i + 1);
    argv.splice(at..at, extra);
    Ok(argv)
}

fn run(cli: Cli) -> Result<()> {
    let common = match &cli.command {
        Command::Simulate(a) => &a.common,
        Command::Analytic(a) => &a.common,
        Command::Scan(a) => &a.common,
    };
    if common.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(common.threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Analytic(a) => analytic(a),
        Command::Scan(a) => scan(a),
    }
}

fn execution(common: &Common) -> Execution {
    if common.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn parse_anisotropy(s: &str) -> Result<Anisotropy> {
    match s {
        "isotropic" => Ok(Anisotropy::Isotropic),
        "dipolar" => Ok(Anisotropy::Dipolar),
        _ => match s.strip_prefix("constant:").map(str::parse::<f64>) {
            Some(Ok(c)) => Ok(Anisotropy::Constant(c)),
            _ => Err(invalid(format!("unknown anisotropy `{s}`; use isotropic, dipolar or constant:<c>"))),
        },
    }
}

fn check_grid(g: &Grid) -> Result<()> {
    if !(g.tmin > 0.0 && g.tmax > g.tmin && g.points >= 2) {
        return Err(invalid(format!(
            "time grid needs 0 < tmin < tmax and at least 2 points, got {} .. {} with {}",
            g.tmin, g.tmax, g.points
        )));
    }
    Ok(())
}

struct Output {
    dir: PathBuf,
    config: Value,
}

impl Output {
    fn new(dir: &Path, config: Value) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), config })
    }

    fn write(&self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
    }

    fn json(&self, name: &str, value: &Value) -> Result<()> {
        self.write(name, &(serde_json::to_string_pretty(value)? + "\n"))
    }

    /// Curve CSV plus a JSON sidecar holding the curve metadata and the run
    /// configuration.
    fn curve(&self, stem: &str, curve: &RelaxationCurve) -> Result<()> {
        self.write(&format!("{stem}.csv"), &curve.to_csv())?;
        let mut meta = curve.metadata_json();
        meta["config"] = self.config.clone();
        self.json(&format!("{stem}.json"), &meta)
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    check_grid(&a.grid)?;
    if a.ns == 0 {
        return Err(invalid("--Ns must be at least 1"));
    }
    if a.hist_bins == 0 {
        return Err(invalid("--hist-bins must be at least 1"));
    }
    let geometry = match a.rb {
        Some(rb) => BallGeometry::new(a.d, a.r0, rb)?,
        None => BallGeometry::with_disorder(a.d, a.r0, a.n.max(1), a.x.unwrap_or(0.0))?,
    };
    let anisotropy = parse_anisotropy(&a.anisotropy)?;
    let model = CouplingModel::new(a.alpha, a.c_alpha, anisotropy)?;
    let mut observables = vec![Observable::Magnetization, Observable::Purity];
    for &j in &a.moments {
        if j == 0 {
            return Err(invalid("moment order must be at least 1"));
        }
        observables.push(Observable::Moment(j));
    }
    let mut task = EnsembleTask::new(geometry, a.n, model, observables);
    task.grid = GridSpec::NnUnits { min: a.grid.tmin, max: a.grid.tmax, points: a.grid.points };

    let x = a.n as f64 * (geometry.rb() / geometry.r0()).powi(a.d as i32);
    let config = json!({
        "command": "simulate",
        "d": a.d, "alpha": a.alpha, "N": a.n, "N_s": a.ns, "x": x, "rb": geometry.rb(), "r0": a.r0,
        "c_alpha": a.c_alpha, "anisotropy": a.anisotropy, "moments": a.moments,
        "grid": { "unit": "J_NN", "tmin": a.grid.tmin, "tmax": a.grid.tmax, "points": a.grid.points },
        "hist_times": a.hist_times, "hist_bins": a.hist_bins, "sample_spins": a.sample_spins,
        "seed": a.common.seed,
    });
    let out = Output::new(&a.common.out, config.clone())?;
    let exec = execution(&a.common);
    let result = ensemble_average(&task, a.ns, a.common.seed, exec)?;
    for curve in &result.curves {
        let mut c = curve.clone();
        c.meta.x = Some(x);
        out.curve(&curve.observable.name(), &c)?;
    }

    // individual spins and histograms from the first realization
    let (_, matrix) = realization(&task, a.common.seed, 0)?;
    let count = a.sample_spins.min(a.n);
    if count > 0 {
        let spins: Vec<usize> = (0..count).collect();
        let traj = spin_trajectories_with(&matrix, &result.grid, &spins, exec);
        let mut csv = String::from("tau,jnn_tau");
        for s in &spins {
            csv.push_str(&format!(",spin{s}"));
        }
        csv.push('\n');
        let scale = result.grid.unit_scale().unwrap_or(f64::NAN);
        for (k, t) in result.grid.values().iter().enumerate() {
            csv.push_str(&format!("{t},{}", t * scale));
            for row in &traj {
                csv.push_str(&format!(",{}", row[k]));
            }
            csv.push('\n');
        }
        out.write("spin_samples.csv", &csv)?;
    }
    let j_nn = result.j_nn.map_or_else(|| median_nn_coupling(&matrix), Ok)?;
    for (k, &t) in a.hist_times.iter().enumerate() {
        if !(t >= 0.0) {
            return Err(invalid(format!("histogram time must be non-negative, got {t}")));
        }
        let h = spin_histogram(&matrix, t / j_nn, a.hist_bins)?;
        out.write(&format!("histogram_{k}.csv"), &h.to_csv())?;
    }
    out.json("run.json", &json!({ "config": config, "j_nn": result.j_nn }))?;
    Ok(())
}

fn analytic(a: AnalyticArgs) -> Result<()> {
    check_grid(&a.grid)?;
    let params = ModelParameters::new(a.d, a.alpha, a.density, a.c_alpha)?;
    let anisotropy = parse_anisotropy(&a.anisotropy)?;
    let iso = rates(&params)?;
    let pred = rates_with_anisotropy(&params, &anisotropy)?;
    // every rate shares the anisotropy rescaling of gamma_m
    let factor = pred.gamma_m / iso.gamma_m;
    let mut moments = serde_json::Map::new();
    for &j in &a.moments {
        if j == 0 {
            return Err(invalid("moment order must be at least 1"));
        }
        moments.insert(j.to_string(), json!(gamma_moment(j, &params)? * factor));
    }
    let j_nn = glassy_core::analytic::poisson_median_nn_coupling(&params);
    let config = json!({
        "command": "analytic",
        "d": a.d, "alpha": a.alpha, "density": a.density, "c_alpha": a.c_alpha,
        "anisotropy": a.anisotropy, "moments": a.moments,
        "grid": { "unit": "J_NN", "tmin": a.grid.tmin, "tmax": a.grid.tmax, "points": a.grid.points },
    });
    let out = Output::new(&a.common.out, config.clone())?;
    out.json(
        "rates.json",
        &json!({
            "kappa": pred.kappa,
            "gamma_m": pred.gamma_m,
            "beta_m": pred.beta_m,
            "gamma_p": pred.gamma_p,
            "beta_p": pred.beta_p,
            "gamma_j": moments,
            "chi": pred.chi,
            "exponential": pred.is_exponential(),
            "j_nn_poisson": j_nn,
            "config": config,
        }),
    )?;

    let grid = TimeGrid::log_in_nn_units(a.grid.tmin, a.grid.tmax, a.grid.points, j_nn)?;
    let mut observables = vec![Observable::Magnetization, Observable::Purity];
    observables.extend(a.moments.iter().map(|&j| Observable::Moment(j)));
    for obs in observables {
        let curve = if anisotropy.is_isotropic() {
            analytic_curve(obs, &params, &grid)?
        } else {
            let (gamma, beta) = match obs {
                Observable::Magnetization => (pred.gamma_m, pred.beta_m),
                Observable::Purity => (pred.gamma_p, pred.beta_p),
                Observable::Moment(j) => (gamma_moment(j, &params)? * factor, pred.beta_m),
            };
            let decay = |t: &f64| (-(gamma * t).powf(beta)).exp();
            let values = grid
                .values()
                .iter()
                .map(|t| match obs {
                    Observable::Magnetization => 0.5 * decay(t),
                    Observable::Purity => 0.5 * (1.0 + decay(t)),
                    Observable::Moment(_) => decay(t),
                })
                .collect();
            let meta = CurveMeta {
                d: Some(a.d),
                alpha: Some(a.alpha),
                j_nn: Some(j_nn),
                source: "closed_form".into(),
                ..CurveMeta::default()
            };
            RelaxationCurve::new(grid.clone(), values, obs, meta)
        };
        out.curve(&format!("analytic_{}", obs.name()), &curve)?;
    }
    Ok(())
}

fn scan(a: ScanArgs) -> Result<()> {
    check_grid(&a.grid)?;
    let settings = ScanSettings {
        grid: GridSpec::NnUnits { min: a.grid.tmin, max: a.grid.tmax, points: a.grid.points },
        r0: a.r0,
        c_alpha: a.c_alpha,
        exec: execution(&a.common),
        ..ScanSettings::default()
    };
    let seed = a.common.seed;
    let (result, config) = match a.mode {
        Mode::BetaVsX => {
            let s = scan_beta_vs_disorder(a.d, a.alpha, a.n, a.ns, &a.x_values, seed, &settings)?;
            let config = json!({
                "command": "scan", "mode": "beta-vs-x", "d": a.d, "alpha": a.alpha, "N": a.n, "N_s": a.ns,
                "x_values": a.x_values, "r0": a.r0, "c_alpha": a.c_alpha, "seed": seed,
            });
            (ScanResult::Disorder(s), config)
        }
        Mode::BetaVsN => {
            let n_max = a.sizes.iter().copied().max().ok_or_else(|| invalid("--sizes is empty"))?;
            let rb = rb_set_for(a.d, a.r0, n_max, a.x_min, a.x_max, a.rb_count)?;
            let s = scan_beta_vs_n(a.d, a.alpha, &a.sizes, a.ns, &rb, seed, &settings)?;
            let config = json!({
                "command": "scan", "mode": "beta-vs-N", "d": a.d, "alpha": a.alpha, "sizes": a.sizes,
                "N_s": a.ns, "rb_set": rb, "x_min": a.x_min, "x_max": a.x_max, "r0": a.r0,
                "c_alpha": a.c_alpha, "seed": seed,
            });
            (ScanResult::Size(s), config)
        }
        Mode::PTable => {
            let cases = default_p_table_cases();
            let t = scan_p_table(&cases, seed, &settings)?;
            let config = json!({
                "command": "scan", "mode": "p-table", "cases": cases.len(), "r0": a.r0,
                "c_alpha": a.c_alpha, "seed": seed,
            });
            (ScanResult::PTable(t), config)
        }
    };
    let mut config = config;
    config["grid"] = json!({ "unit": "J_NN", "tmin": a.grid.tmin, "tmax": a.grid.tmax, "points": a.grid.points });
    let out = Output::new(&a.common.out, config.clone())?;
    out.write("scan.csv", &result.to_csv())?;
    let mut body: Value = serde_json::from_str(&result.to_json()?)?;
    body["config"] = config;
    out.json("scan.json", &body)?;
    Ok(())
}
