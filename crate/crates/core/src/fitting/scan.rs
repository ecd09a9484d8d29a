//! Parameter scans: stretch power against disorder, against system size,
//! and the finite-size exponent table over `(d, alpha)`.
//!
//! Every scan point draws from its own master seed, derived from the scan
//! seed and the point's position, so any point can be re-run alone.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{fit_power_law, fit_stretched_exponential_with, FitOptions, PowerLawFit, StretchedExpFit};
use crate::couplings::CouplingModel;
use crate::dynamics::{ensemble_average, EnsembleTask, GridSpec, Observable};
use crate::ensemble::{exclusion_radius_for, BallGeometry, STRONG_DISORDER_X};
use crate::error::{invalid, Result};
use crate::exec::Execution;
use crate::stats;

/// Relative deviations below this are dominated by averaging noise and are
/// left out of power-law fits.
pub const NOISE_FLOOR: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct ScanSettings {
    pub grid: GridSpec,
    pub r0: f64,
    pub c_alpha: f64,
    pub exec: Execution,
    pub fit: FitOptions,
}

impl Default for ScanSettings {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            r0: 1.0,
            c_alpha: 1.0,
            exec: Execution::default(),
            fit: FitOptions::default(),
        }
    }
}

/// SplitMix64 of `master ^ tag`, used to give scan points independent seeds.
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    let mut z = (master ^ tag.wrapping_mul(0xD6E8_FEB8_6659_FD93)).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Either a fit or the reason it could not be made.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub fit: Option<StretchedExpFit>,
    pub error: Option<String>,
}

impl FitOutcome {
    fn from_result(r: Result<StretchedExpFit>) -> Self {
        match r {
            Ok(fit) => Self { fit: Some(fit), error: None },
            Err(e) => Self { fit: None, error: Some(e.to_string()) },
        }
    }

    fn failed(msg: String) -> Self {
        Self { fit: None, error: Some(msg) }
    }

    pub fn beta(&self) -> Option<f64> {
        self.fit.map(|f| f.beta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisorderPoint {
    pub x: f64,
    pub rb: f64,
    pub seed: u64,
    pub j_nn: Option<f64>,
    pub magnetization: Option<FitOutcome>,
    pub purity: Option<FitOutcome>,
}

/// Mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub mean: f64,
    pub sem: f64,
    pub count: usize,
}

fn plateau(values: &[f64]) -> Option<Plateau> {
    if values.is_empty() {
        return None;
    }
    let (mean, sem) = stats::mean_and_sem(values);
    Some(Plateau { mean, sem, count: values.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisorderScan {
    pub d: usize,
    pub alpha: f64,
    pub n_spins: usize,
    pub n_samples: usize,
    pub master_seed: u64,
    pub points: Vec<DisorderPoint>,
    /// Mean fitted stretch power over points with `x <= 0.01`.
    pub plateau_magnetization: Option<Plateau>,
    pub plateau_purity: Option<Plateau>,
}

fn validate(d: usize, alpha: f64, n: usize, n_s: usize) -> Result<()> {
    if d < 1 {
        return Err(invalid("dimension must be at least 1"));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(invalid(format!("alpha must be positive, got {alpha}")));
    }
    if n < 2 || n_s < 1 {
        return Err(invalid(format!("need N >= 2 and N_s >= 1, got N={n} N_s={n_s}")));
    }
    Ok(())
}

/// One ensemble run at exclusion radius `rb`, fitted for the requested observables.
#[allow(clippy::too_many_arguments)]
fn run_point(
    d: usize,
    alpha: f64,
    n: usize,
    n_s: usize,
    rb: f64,
    seed: u64,
    want: (bool, bool),
    settings: &ScanSettings,
) -> Result<DisorderPoint> {
    let geometry = BallGeometry::new(d, settings.r0, rb)?;
    let x = n as f64 * (rb / settings.r0).powi(d as i32);
    let mut observables = Vec::new();
    if want.0 {
        observables.push(Observable::Magnetization);
    }
    if want.1 {
        observables.push(Observable::Purity);
    }
    let mut task = EnsembleTask::new(geometry, n, CouplingModel::isotropic(alpha, settings.c_alpha)?, observables);
    task.grid = settings.grid.clone();
    let fit = |r: &crate::dynamics::EnsembleResult, o: Observable| {
        let curve = r.curve(o).expect("requested observable");
        FitOutcome::from_result(fit_stretched_exponential_with(curve, None, settings.fit))
    };
    let point = match ensemble_average(&task, n_s, seed, settings.exec) {
        Ok(r) => DisorderPoint {
            x,
            rb,
            seed,
            j_nn: r.j_nn,
            magnetization: want.0.then(|| fit(&r, Observable::Magnetization)),
            purity: want.1.then(|| fit(&r, Observable::Purity)),
        },
        Err(e @ crate::Error::PackingFailure { .. }) => DisorderPoint {
            x,
            rb,
            seed,
            j_nn: None,
            magnetization: want.0.then(|| FitOutcome::failed(e.to_string())),
            purity: want.1.then(|| FitOutcome::failed(e.to_string())),
        },
        Err(e) => return Err(e),
    };
    Ok(point)
}

/// Stretch power of magnetization and purity against the disorder parameter.
pub fn scan_beta_vs_disorder(
    d: usize,
    alpha: f64,
    n: usize,
    n_s: usize,
    x_values: &[f64],
    master_seed: u64,
    settings: &ScanSettings,
) -> Result<DisorderScan> {
    validate(d, alpha, n, n_s)?;
    let mut points = Vec::with_capacity(x_values.len());
    for (k, &x) in x_values.iter().enumerate() {
        if !(x >= 0.0 && x.is_finite()) {
            return Err(invalid(format!("disorder parameter must be non-negative, got {x}")));
        }
        let rb = exclusion_radius_for(x, n, d, settings.r0);
        let mut point = run_point(d, alpha, n, n_s, rb, derive_seed(master_seed, k as u64), (true, true), settings)?;
        // keep the requested value; recomputing it from rb can land an ulp above the plateau cutoff
        point.x = x;
        points.push(point);
    }
    let strong: Vec<&DisorderPoint> = points.iter().filter(|p| p.x <= STRONG_DISORDER_X).collect();
    let collect = |sel: fn(&DisorderPoint) -> Option<f64>| -> Vec<f64> { strong.iter().filter_map(|p| sel(p)).collect() };
    let mags = collect(|p| p.magnetization.as_ref().and_then(FitOutcome::beta));
    let purs = collect(|p| p.purity.as_ref().and_then(FitOutcome::beta));
    Ok(DisorderScan {
        d,
        alpha,
        n_spins: n,
        n_samples: n_s,
        master_seed,
        plateau_magnetization: plateau(&mags),
        plateau_purity: plateau(&purs),
        points,
    })
}

/// Exclusion radii whose disorder parameters at `n_max` spins are
/// log-spaced over `[x_min, x_max]`.
pub fn rb_set_for(d: usize, r0: f64, n_max: usize, x_min: f64, x_max: f64, count: usize) -> Result<Vec<f64>> {
    if !(x_min > 0.0 && x_max >= x_min) || count == 0 {
        return Err(invalid("need 0 < x_min <= x_max and a positive count"));
    }
    Ok((0..count)
        .map(|i| {
            let w = if count == 1 { 0.0 } else { i as f64 / (count - 1) as f64 };
            let x = (x_min.ln() * (1.0 - w) + x_max.ln() * w).exp();
            exclusion_radius_for(x, n_max, d, r0)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeStat {
    pub beta_mean: f64,
    pub beta_sem: f64,
    /// `d / alpha - beta_mean`.
    pub deviation: f64,
    pub fits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizePoint {
    pub n_spins: usize,
    pub n_samples: usize,
    pub runs: Vec<DisorderPoint>,
    pub magnetization: Option<SizeStat>,
    pub purity: Option<SizeStat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeScan {
    pub d: usize,
    pub alpha: f64,
    pub n_samples: usize,
    pub rb_set: Vec<f64>,
    pub master_seed: u64,
    pub points: Vec<SizePoint>,
    /// Fit of the deviation `~ N^-p` over points above the noise floor.
    pub power_magnetization: Option<PowerLawFit>,
    pub power_purity: Option<PowerLawFit>,
}

fn size_stat(beta_theory: f64, betas: &[f64]) -> Option<SizeStat> {
    if betas.is_empty() {
        return None;
    }
    let (mean, sem) = stats::mean_and_sem(betas);
    Some(SizeStat { beta_mean: mean, beta_sem: sem, deviation: beta_theory - mean, fits: betas.len() })
}

fn power_fit(beta_theory: f64, points: &[SizePoint], sel: fn(&SizePoint) -> Option<&SizeStat>) -> Option<PowerLawFit> {
    let data: Vec<(f64, f64)> = points
        .iter()
        .filter_map(|p| sel(p).map(|s| (p.n_spins as f64, s.deviation)))
        .filter(|&(_, dev)| dev > 0.0 && dev / beta_theory >= NOISE_FLOOR)
        .collect();
    fit_power_law(&data).ok()
}

#[allow(clippy::too_many_arguments)]
fn size_scan(
    d: usize,
    alpha: f64,
    n_values: &[usize],
    n_s: usize,
    rb_set: &[f64],
    master_seed: u64,
    want: (bool, bool),
    settings: &ScanSettings,
) -> Result<SizeScan> {
    if n_values.is_empty() || rb_set.is_empty() {
        return Err(invalid("need at least one system size and one exclusion radius"));
    }
    let beta_theory = d as f64 / alpha;
    let mut points = Vec::with_capacity(n_values.len());
    for &n in n_values {
        validate(d, alpha, n, n_s)?;
        let runs = rb_set
            .iter()
            .enumerate()
            .map(|(k, &rb)| {
                let seed = derive_seed(derive_seed(master_seed, n as u64), k as u64);
                run_point(d, alpha, n, n_s, rb, seed, want, settings)
            })
            .collect::<Result<Vec<_>>>()?;
        let betas = |sel: fn(&DisorderPoint) -> Option<&FitOutcome>| -> Vec<f64> {
            runs.iter().filter_map(|r| sel(r).and_then(FitOutcome::beta)).collect()
        };
        let magnetization = size_stat(beta_theory, &betas(|r| r.magnetization.as_ref()));
        let purity = size_stat(beta_theory, &betas(|r| r.purity.as_ref()));
        points.push(SizePoint { n_spins: n, n_samples: n_s, runs, magnetization, purity });
    }
    Ok(SizeScan {
        d,
        alpha,
        n_samples: n_s,
        rb_set: rb_set.to_vec(),
        master_seed,
        power_magnetization: power_fit(beta_theory, &points, |p| p.magnetization.as_ref()),
        power_purity: power_fit(beta_theory, &points, |p| p.purity.as_ref()),
        points,
    })
}

/// Stretch-power deviation from `d / alpha` against system size, averaged
/// over a fixed set of exclusion radii.
pub fn scan_beta_vs_n(
    d: usize,
    alpha: f64,
    n_values: &[usize],
    n_s: usize,
    rb_set: &[f64],
    master_seed: u64,
    settings: &ScanSettings,
) -> Result<SizeScan> {
    size_scan(d, alpha, n_values, n_s, rb_set, master_seed, (true, true), settings)
}

/// Sizes and sample counts for one `(d, alpha)` entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PTableCase {
    pub d: usize,
    pub alpha: f64,
    pub magnetization_sizes: Vec<usize>,
    pub magnetization_samples: usize,
    pub purity_sizes: Vec<usize>,
    pub purity_samples: usize,
}

/// `d = 1, 2, 3` and integer `alpha = d..=10`, with sizes spanning the
/// ranges 100-1300 (3D), 50-800 (2D), and 2-10 / 10-100 (1D).
pub fn default_p_table_cases() -> Vec<PTableCase> {
    let mut cases = Vec::new();
    for d in 1..=3usize {
        for alpha in d..=10 {
            let (m, ms, p, ps) = match d {
                3 => (vec![100, 200, 400, 800, 1300], 200, vec![100, 200, 400, 800, 1300], 200),
                2 => (vec![50, 100, 200, 400, 800], 200, vec![50, 100, 200, 400, 800], 200),
                _ => (vec![2, 3, 4, 6, 10], 20_000, vec![10, 18, 32, 56, 100], 4_000),
            };
            cases.push(PTableCase {
                d,
                alpha: alpha as f64,
                magnetization_sizes: m,
                magnetization_samples: ms,
                purity_sizes: p,
                purity_samples: ps,
            });
        }
    }
    cases
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PTableRow {
    pub d: usize,
    pub alpha: f64,
    pub seed: u64,
    pub magnetization: SizeScan,
    /// Equal to `magnetization` when both observables share sizes and samples.
    pub purity: SizeScan,
}

impl PTableRow {
    pub fn p_magnetization(&self) -> Option<PowerLawFit> {
        self.magnetization.power_magnetization
    }
    pub fn p_purity(&self) -> Option<PowerLawFit> {
        self.purity.power_purity
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PTable {
    pub master_seed: u64,
    pub rows: Vec<PTableRow>,
}

/// Seed of a table entry, independent of its position in the case list.
fn case_seed(master: u64, d: usize, alpha: f64) -> u64 {
    derive_seed(derive_seed(master, d as u64), alpha.to_bits())
}

/// Finite-size exponents for every case. Exclusion radii follow the size
/// scan convention: five values with `x` log-spaced over `[1e-4, 1e-2]` at
/// the largest size of each run.
pub fn scan_p_table(cases: &[PTableCase], master_seed: u64, settings: &ScanSettings) -> Result<PTable> {
    let mut rows = Vec::with_capacity(cases.len());
    for case in cases {
        let seed = case_seed(master_seed, case.d, case.alpha);
        let run = |sizes: &[usize], n_s: usize, want: (bool, bool)| -> Result<SizeScan> {
            let n_max = *sizes.iter().max().ok_or_else(|| invalid("empty size list"))?;
            let rb = rb_set_for(case.d, settings.r0, n_max, 1e-4, STRONG_DISORDER_X, 5)?;
            size_scan(case.d, case.alpha, sizes, n_s, &rb, seed, want, settings)
        };
        let shared = case.magnetization_sizes == case.purity_sizes && case.magnetization_samples == case.purity_samples;
        let (magnetization, purity) = if shared {
            let both = run(&case.magnetization_sizes, case.magnetization_samples, (true, true))?;
            (both.clone(), both)
        } else {
            (
                run(&case.magnetization_sizes, case.magnetization_samples, (true, false))?,
                run(&case.purity_sizes, case.purity_samples, (false, true))?,
            )
        };
        rows.push(PTableRow { d: case.d, alpha: case.alpha, seed, magnetization, purity });
    }
    Ok(PTable { master_seed, rows })
}

/// Seed that [`scan_p_table`] uses for the `(d, alpha)` entry.
pub fn p_table_case_seed(master: u64, d: usize, alpha: f64) -> u64 {
    case_seed(master, d, alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ScanResult {
    Disorder(DisorderScan),
    Size(SizeScan),
    PTable(PTable),
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fit_columns(out: &mut String, o: &Option<FitOutcome>) {
    let f = o.as_ref().and_then(|o| o.fit);
    let _ = write!(
        out,
        ",{},{},{},{},{},{}",
        opt(f.map(|f| f.beta)),
        opt(f.map(|f| f.beta_err())),
        opt(f.map(|f| f.gamma)),
        opt(f.map(|f| f.gamma_err())),
        opt(f.map(|f| f.amplitude)),
        f.map(|f| f.converged.to_string()).unwrap_or_default(),
    );
}

fn stat_columns(out: &mut String, s: &Option<SizeStat>) {
    let _ = write!(
        out,
        ",{},{},{}",
        opt(s.as_ref().map(|s| s.beta_mean)),
        opt(s.as_ref().map(|s| s.beta_sem)),
        opt(s.as_ref().map(|s| s.deviation)),
    );
}

fn power_comment(out: &mut String, name: &str, p: &Option<PowerLawFit>) {
    match p {
        Some(p) => {
            let _ = writeln!(out, "# {name}: p={} stderr={} r2={} points={}", p.exponent, p.stderr_exponent, p.r_squared, p.points);
        }
        None => {
            let _ = writeln!(out, "# {name}: no power-law fit (fewer than 3 points above the noise floor)");
        }
    }
}

impl ScanResult {
    /// One row per scan point. Header comments carry the scan parameters.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        match self {
            ScanResult::Disorder(s) => {
                let _ = writeln!(out, "# mode=beta_vs_x d={} alpha={} N={} N_s={} master_seed={}", s.d, s.alpha, s.n_spins, s.n_samples, s.master_seed);
                if let Some(p) = s.plateau_magnetization {
                    let _ = writeln!(out, "# plateau_magnetization: mean={} sem={} count={}", p.mean, p.sem, p.count);
                }
                if let Some(p) = s.plateau_purity {
                    let _ = writeln!(out, "# plateau_purity: mean={} sem={} count={}", p.mean, p.sem, p.count);
                }
                out.push_str("x,rb,seed,j_nn,beta_m,beta_m_err,gamma_m,gamma_m_err,A_m,converged_m,beta_p,beta_p_err,gamma_p,gamma_p_err,A_p,converged_p,error\n");
                for p in &s.points {
                    let _ = write!(out, "{},{},{},{}", p.x, p.rb, p.seed, opt(p.j_nn));
                    fit_columns(&mut out, &p.magnetization);
                    fit_columns(&mut out, &p.purity);
                    let err = [&p.magnetization, &p.purity]
                        .iter()
                        .find_map(|o| o.as_ref().and_then(|o| o.error.clone()))
                        .unwrap_or_default();
                    let _ = writeln!(out, ",\"{}\"", err.replace('"', "'"));
                }
            }
            ScanResult::Size(s) => {
                let rb: Vec<String> = s.rb_set.iter().map(|r| r.to_string()).collect();
                let _ = writeln!(out, "# mode=beta_vs_N d={} alpha={} N_s={} master_seed={} rb_set={}", s.d, s.alpha, s.n_samples, s.master_seed, rb.join(";"));
                power_comment(&mut out, "magnetization", &s.power_magnetization);
                power_comment(&mut out, "purity", &s.power_purity);
                out.push_str("N,N_s,beta_m_mean,beta_m_sem,deviation_m,beta_p_mean,beta_p_sem,deviation_p\n");
                for p in &s.points {
                    let _ = write!(out, "{},{}", p.n_spins, p.n_samples);
                    stat_columns(&mut out, &p.magnetization);
                    stat_columns(&mut out, &p.purity);
                    out.push('\n');
                }
            }
            ScanResult::PTable(t) => {
                let _ = writeln!(out, "# mode=p_table master_seed={}", t.master_seed);
                out.push_str("d,alpha,seed,p_m,p_m_err,r2_m,p_p,p_p_err,r2_p\n");
                for r in &t.rows {
                    let cols = |p: Option<PowerLawFit>| {
                        format!(
                            "{},{},{}",
                            opt(p.map(|p| p.exponent)),
                            opt(p.map(|p| p.stderr_exponent)),
                            opt(p.map(|p| p.r_squared))
                        )
                    };
                    let _ = writeln!(out, "{},{},{},{},{}", r.d, r.alpha, r.seed, cols(r.p_magnetization()), cols(r.p_purity()));
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> ScanSettings {
        ScanSettings { grid: GridSpec::NnUnits { min: 1e-2, max: 1e2, points: 60 }, ..ScanSettings::default() }
    }

    #[test]
    fn seeds_differ_and_repeat() {
        assert_eq!(derive_seed(1, 2), derive_seed(1, 2));
        assert_ne!(derive_seed(1, 2), derive_seed(1, 3));
        assert_ne!(derive_seed(1, 2), derive_seed(2, 2));
    }

    #[test]
    fn rb_set_spans_requested_x() {
        let rb = rb_set_for(3, 1.0, 1000, 1e-4, 1e-2, 5).unwrap();
        assert_eq!(rb.len(), 5);
        let x = |r: f64| 1000.0 * r.powi(3);
        assert!((x(rb[0]) - 1e-4).abs() < 1e-15);
        assert!((x(rb[4]) - 1e-2).abs() < 1e-13);
        assert!(rb.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn disorder_scan_is_reproducible() {
        let a = scan_beta_vs_disorder(3, 6.0, 30, 8, &[0.0, 1e-3], 4, &quick()).unwrap();
        let b = scan_beta_vs_disorder(3, 6.0, 30, 8, &[0.0, 1e-3], 4, &quick()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.points[0].rb, 0.0);
        assert_eq!(a.plateau_magnetization.unwrap().count, 2);
        let csv = ScanResult::Disorder(a).to_csv();
        assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 3);
    }

    #[test]
    fn packing_failure_is_recorded() {
        let s = scan_beta_vs_disorder(2, 4.0, 40, 2, &[3.0], 1, &quick()).unwrap();
        let err = s.points[0].magnetization.as_ref().unwrap().error.as_ref().unwrap();
        assert!(err.contains("exhausting"), "{err}");
        assert!(s.plateau_magnetization.is_none());
    }

    #[test]
    fn p_table_entry_is_the_size_scan() {
        let case = PTableCase {
            d: 2,
            alpha: 4.0,
            magnetization_sizes: vec![10, 20],
            magnetization_samples: 4,
            purity_sizes: vec![10, 20],
            purity_samples: 4,
        };
        let table = scan_p_table(std::slice::from_ref(&case), 9, &quick()).unwrap();
        let rb = rb_set_for(2, 1.0, 20, 1e-4, 1e-2, 5).unwrap();
        let direct = scan_beta_vs_n(2, 4.0, &[10, 20], 4, &rb, p_table_case_seed(9, 2, 4.0), &quick()).unwrap();
        assert_eq!(table.rows[0].magnetization, direct);
        let json = ScanResult::PTable(table).to_json().unwrap();
        assert!(json.contains("\"mode\": \"p_table\""));
    }

    #[test]
    fn default_table_covers_all_cases() {
        let cases = default_p_table_cases();
        assert_eq!(cases.len(), 10 + 9 + 8);
        assert!(cases.iter().all(|c| c.alpha >= c.d as f64));
    }
}
