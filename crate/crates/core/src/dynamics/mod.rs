//! Exact Emch-Radin relaxation from the x-polarized product state.
//!
//! Each spin's transverse expectation is the product of the pair
//! oscillations `cos(2 J_ik tau)` over its partners; magnetization, purity
//! and higher moments are spin averages of powers of that product.

mod average;
mod oracle;

pub use average::{
    ensemble_average, realization, EnsembleResult, EnsembleTask, GridSpec, BLOCK_SIZE,
};
pub use oracle::{exact_oracle, OracleCurves, ORACLE_MAX_SPINS};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::couplings::CouplingMatrix;
use crate::error::{invalid, Result};
use crate::exec::Execution;
use crate::stats::CompensatedSum;

/// Strictly increasing, non-negative times (units of 1/energy).
///
/// `unit_scale` records the `J_NN` used when the grid was laid out in units
/// of `J_NN * tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    values: Vec<f64>,
    unit_scale: Option<f64>,
}

impl TimeGrid {
    pub fn new(values: Vec<f64>, unit_scale: Option<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("time grid is empty"));
        }
        if values.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(invalid("times must be finite and non-negative"));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("times must be strictly increasing"));
        }
        if let Some(s) = unit_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(invalid(format!("unit scale must be positive, got {s}")));
            }
        }
        Ok(Self { values, unit_scale })
    }

    /// `points` log-spaced times from `min` to `max` inclusive.
    pub fn log_spaced(min: f64, max: f64, points: usize) -> Result<Self> {
        Self::new(log_space(min, max, points)?, None)
    }

    /// Log-spaced grid in `J_NN * tau` from `min` to `max`, stored as
    /// physical times `s / j_nn`.
    pub fn log_in_nn_units(min: f64, max: f64, points: usize, j_nn: f64) -> Result<Self> {
        if !(j_nn > 0.0 && j_nn.is_finite()) {
            return Err(invalid(format!("J_NN must be positive, got {j_nn}")));
        }
        let values = log_space(min, max, points)?.into_iter().map(|s| s / j_nn).collect();
        Self::new(values, Some(j_nn))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn unit_scale(&self) -> Option<f64> {
        self.unit_scale
    }

    /// Times in `J_NN * tau` units, when a unit scale is attached.
    pub fn scaled_values(&self) -> Option<Vec<f64>> {
        self.unit_scale.map(|s| self.values.iter().map(|t| t * s).collect())
    }

    /// Same grid with a different unit annotation.
    pub fn with_unit_scale(mut self, unit_scale: Option<f64>) -> Result<Self> {
        self = Self::new(self.values, unit_scale)?;
        Ok(self)
    }
}

fn log_space(min: f64, max: f64, points: usize) -> Result<Vec<f64>> {
    if !(min > 0.0 && max > min) || points < 2 {
        return Err(invalid(format!(
            "log grid needs 0 < min < max and >= 2 points (min {min}, max {max}, points {points})"
        )));
    }
    let (a, b) = (min.ln(), max.ln());
    Ok((0..points)
        .map(|i| {
            if i == 0 {
                min
            } else if i == points - 1 {
                max
            } else {
                (a + (b - a) * i as f64 / (points - 1) as f64).exp()
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    /// `<s_x>`, spin average of `<sigma_x>/2`.
    Magnetization,
    /// Spin-averaged single-spin purity `(1 + <sigma_x>^2) / 2`.
    Purity,
    /// Spin average of `<sigma_x>^j`.
    Moment(u32),
}

impl Observable {
    pub fn name(&self) -> String {
        match self {
            Observable::Magnetization => "magnetization".into(),
            Observable::Purity => "purity".into(),
            Observable::Moment(j) => format!("moment{j}"),
        }
    }

    /// Value at `tau = 0`.
    pub fn initial_value(&self) -> f64 {
        match self {
            Observable::Magnetization => 0.5,
            _ => 1.0,
        }
    }

    pub fn range(&self) -> (f64, f64) {
        match self {
            Observable::Magnetization => (-0.5, 0.5),
            Observable::Purity => (0.5, 1.0),
            Observable::Moment(j) if j % 2 == 0 => (0.0, 1.0),
            Observable::Moment(_) => (-1.0, 1.0),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Observable::Moment(0) => Err(invalid("moment order must be >= 1")),
            _ => Ok(()),
        }
    }

    /// Spin average of this observable given per-spin `<sigma_x>` values.
    fn average(&self, spins: &[f64]) -> f64 {
        let n = spins.len() as f64;
        let mut acc = CompensatedSum::new();
        match *self {
            Observable::Magnetization => {
                spins.iter().for_each(|&s| acc.add(s));
                0.5 * acc.value() / n
            }
            Observable::Purity => {
                spins.iter().for_each(|&s| acc.add(s * s));
                0.5 * (1.0 + acc.value() / n)
            }
            Observable::Moment(j) => {
                spins.iter().for_each(|&s| acc.add(int_power(s, j)));
                acc.value() / n
            }
        }
    }
}

/// `base^j` by repeated multiplication.
#[inline]
pub(crate) fn int_power(base: f64, j: u32) -> f64 {
    let mut out = 1.0;
    for _ in 0..j {
        out *= base;
    }
    out
}

/// Provenance attached to every curve.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CurveMeta {
    pub n_spins: Option<usize>,
    pub n_samples: usize,
    pub d: Option<usize>,
    pub alpha: Option<f64>,
    pub x: Option<f64>,
    pub rb: Option<f64>,
    pub r0: Option<f64>,
    pub master_seed: Option<u64>,
    pub j_nn: Option<f64>,
    /// Free-form origin tag, e.g. `"ensemble"`, `"closed_form"`.
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxationCurve {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
    /// Standard error of the disorder average; zeros when not applicable.
    pub stderr: Vec<f64>,
    pub observable: Observable,
    pub meta: CurveMeta,
}

impl RelaxationCurve {
    pub fn new(grid: TimeGrid, values: Vec<f64>, observable: Observable, meta: CurveMeta) -> Self {
        let stderr = vec![0.0; values.len()];
        Self { grid, values, stderr, observable, meta }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// True when all values lie within the observable's physical range
    /// (with `slack` tolerance for rounding).
    pub fn within_range(&self, slack: f64) -> bool {
        let (lo, hi) = self.observable.range();
        self.values.iter().all(|v| *v >= lo - slack && *v <= hi + slack)
    }

    /// CSV with columns `tau,value,stderr,jnn_tau` (the last empty when the
    /// grid carries no unit scale).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("tau,value,stderr,jnn_tau\n");
        let scale = self.grid.unit_scale();
        for ((t, v), e) in self.grid.values().iter().zip(&self.values).zip(&self.stderr) {
            let scaled = scale.map(|s| (t * s).to_string()).unwrap_or_default();
            let _ = writeln!(out, "{t},{v},{e},{scaled}");
        }
        out
    }

    /// JSON sidecar with the observable and provenance fields.
    pub fn metadata_json(&self) -> serde_json::Value {
        serde_json::json!({
            "observable": self.observable.name(),
            "d": self.meta.d,
            "alpha": self.meta.alpha,
            "N": self.meta.n_spins,
            "N_s": self.meta.n_samples,
            "rb": self.meta.rb,
            "r0": self.meta.r0,
            "x": self.meta.x,
            "master_seed": self.meta.master_seed,
            "j_nn": self.meta.j_nn,
            "source": self.meta.source,
            "points": self.len(),
        })
    }
}

/// `cos(two_tau * j)`, corrected for the rounding of the product once the
/// phase is large enough for that rounding to show.
#[inline]
fn pair_cos(two_tau: f64, j: f64) -> f64 {
    let x = two_tau * j;
    let lo = two_tau.mul_add(j, -x);
    let c = x.cos();
    if lo.abs() > 1e-13 {
        (c - x.sin() * lo).clamp(-1.0, 1.0)
    } else {
        c
    }
}

/// `<sigma_x^i(tau)> = prod_{k != i} cos(2 J_ik tau)`.
pub fn spin_magnetization(i: usize, matrix: &CouplingMatrix, tau: f64) -> f64 {
    let two_tau = 2.0 * tau;
    let mut p = 1.0;
    for (k, &j) in matrix.row(i).iter().enumerate() {
        if k != i {
            p *= pair_cos(two_tau, j);
        }
    }
    p
}

/// All per-spin `<sigma_x^i(tau)>` at once. Each pair cosine is evaluated
/// once and multiplied into both partners; every spin still accumulates its
/// factors in ascending partner order, so results agree bit for bit with
/// [`spin_magnetization`].
pub fn spin_values(matrix: &CouplingMatrix, tau: f64, out: &mut [f64]) {
    let n = matrix.n();
    assert_eq!(out.len(), n);
    out.fill(1.0);
    let two_tau = 2.0 * tau;
    for i in 0..n {
        let (head, tail) = out.split_at_mut(i + 1);
        let pi = &mut head[i];
        let mut acc = *pi;
        for (pk, &j) in tail.iter_mut().zip(matrix.upper_row(i)) {
            let c = pair_cos(two_tau, j);
            acc *= c;
            *pk *= c;
        }
        *pi = acc;
    }
}

/// Phase `2 |J| tau` below which a partner's cosine is folded into the
/// series for `ln cos`.
const SERIES_PHASE: f64 = 0.1;

/// Coefficients of `-ln cos x = sum_m a_m x^(2m)`, m = 1..5. With
/// `x < 0.1` the first omitted term is below 1e-15 relative.
const LN_COS: [f64; 5] = [1.0 / 2.0, 1.0 / 12.0, 1.0 / 45.0, 17.0 / 2520.0, 31.0 / 14175.0];

/// Partners of one spin, strongest first, with suffix sums of `J^(2m)` so
/// that the weak tail of the product costs O(1) per time.
struct PartnerTable {
    strength: Vec<f64>,
    /// `tail[c][m] = sum_{k >= c} strength[k]^(2m + 2)`.
    tail: Vec<[f64; 5]>,
}

impl PartnerTable {
    fn new(matrix: &CouplingMatrix, i: usize) -> Self {
        let mut strength: Vec<f64> = matrix
            .row(i)
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .map(|(_, j)| j.abs())
            .collect();
        strength.sort_by(|a, b| b.total_cmp(a));
        let mut tail = vec![[0.0; 5]; strength.len() + 1];
        for c in (0..strength.len()).rev() {
            let j2 = strength[c] * strength[c];
            let mut p = j2;
            let mut row = tail[c + 1];
            for slot in row.iter_mut() {
                *slot += p;
                p *= j2;
            }
            tail[c] = row;
        }
        Self { strength, tail }
    }

    /// `<sigma_x^i>` on an increasing grid.
    fn trajectory(&self, grid: &TimeGrid) -> Vec<f64> {
        let mut cut = 0;
        grid.values()
            .iter()
            .map(|&tau| {
                let two_tau = 2.0 * tau;
                while cut < self.strength.len() && two_tau * self.strength[cut] >= SERIES_PHASE {
                    cut += 1;
                }
                let mut p = 1.0;
                for &j in &self.strength[..cut] {
                    p *= pair_cos(two_tau, j);
                }
                let x2 = two_tau * two_tau;
                let mut scale = x2;
                let mut log = 0.0;
                for (a, s) in LN_COS.iter().zip(&self.tail[cut]) {
                    log += a * scale * s;
                    scale *= x2;
                }
                p * (-log).exp()
            })
            .collect()
    }
}

/// `<sigma_x^i>` on every grid time for the selected spins: `[spin][time]`.
///
/// Strong partners enter through their cosines; the weak tail with phase
/// below 0.1 enters through a five-term series for `ln cos`, which agrees
/// with the direct product to rounding.
pub fn spin_trajectories_with(
    matrix: &CouplingMatrix,
    grid: &TimeGrid,
    spins: &[usize],
    exec: Execution,
) -> Vec<Vec<f64>> {
    exec.map(spins.len(), |s| PartnerTable::new(matrix, spins[s]).trajectory(grid))
}

/// Spin averages of `observables` on every grid time: `[observable][time]`.
pub fn evaluate_observables(
    matrix: &CouplingMatrix,
    grid: &TimeGrid,
    observables: &[Observable],
    exec: Execution,
) -> Result<Vec<Vec<f64>>> {
    for o in observables {
        o.validate()?;
    }
    let all: Vec<usize> = (0..matrix.n()).collect();
    let per_spin = spin_trajectories_with(matrix, grid, &all, exec);
    let mut spins = vec![0.0; matrix.n()];
    let mut out = vec![Vec::with_capacity(grid.len()); observables.len()];
    for t in 0..grid.len() {
        for (v, row) in spins.iter_mut().zip(&per_spin) {
            *v = row[t];
        }
        for (o, obs) in observables.iter().enumerate() {
            out[o].push(obs.average(&spins));
        }
    }
    Ok(out)
}

fn single_curve(matrix: &CouplingMatrix, grid: &TimeGrid, observable: Observable) -> Result<RelaxationCurve> {
    let values = evaluate_observables(matrix, grid, &[observable], Execution::Sequential)?
        .pop()
        .expect("one observable");
    let meta = CurveMeta {
        n_spins: Some(matrix.n()),
        n_samples: 1,
        j_nn: grid.unit_scale(),
        source: "single_realization".into(),
        ..CurveMeta::default()
    };
    Ok(RelaxationCurve::new(grid.clone(), values, observable, meta))
}

pub fn magnetization_curve(matrix: &CouplingMatrix, grid: &TimeGrid) -> RelaxationCurve {
    single_curve(matrix, grid, Observable::Magnetization).expect("magnetization is always valid")
}

pub fn moment_curve(j: u32, matrix: &CouplingMatrix, grid: &TimeGrid) -> Result<RelaxationCurve> {
    single_curve(matrix, grid, Observable::Moment(j))
}

pub fn purity_curve(matrix: &CouplingMatrix, grid: &TimeGrid) -> RelaxationCurve {
    single_curve(matrix, grid, Observable::Purity).expect("purity is always valid")
}

/// Per-spin `<sigma_x>` trajectories for the selected spins: `[spin][time]`.
pub fn spin_trajectories(matrix: &CouplingMatrix, grid: &TimeGrid, spins: &[usize]) -> Vec<Vec<f64>> {
    spin_trajectories_with(matrix, grid, spins, Execution::Sequential)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinHistogram {
    pub time: f64,
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub n_spins: usize,
}

impl SpinHistogram {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", self.bin_edges[i], self.bin_edges[i + 1], c);
        }
        out
    }
}

/// Histogram over `[-1, 1]` of the per-spin `<sigma_x>` at time `tau`.
/// The last bin is closed on the right so that fully polarized spins count.
pub fn spin_histogram(matrix: &CouplingMatrix, tau: f64, bins: usize) -> Result<SpinHistogram> {
    if bins < 2 {
        return Err(invalid(format!("need at least 2 bins, got {bins}")));
    }
    let mut spins = vec![0.0; matrix.n()];
    spin_values(matrix, tau, &mut spins);
    let width = 2.0 / bins as f64;
    let bin_edges: Vec<f64> = (0..=bins).map(|b| -1.0 + b as f64 * width).collect();
    let mut counts = vec![0usize; bins];
    for s in spins {
        let b = (((s + 1.0) / width).floor() as isize).clamp(0, bins as isize - 1) as usize;
        counts[b] += 1;
    }
    Ok(SpinHistogram { time: tau, bin_edges, counts, n_spins: matrix.n() })
}
