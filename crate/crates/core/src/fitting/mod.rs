//! Stretched-exponential and power-law fits, and the scans built on them.

mod scan;

pub use scan::{
    default_p_table_cases, derive_seed, p_table_case_seed, rb_set_for, scan_beta_vs_disorder, scan_beta_vs_n, scan_p_table, DisorderPoint,
    DisorderScan, FitOutcome, PTable, PTableCase, PTableRow, Plateau, ScanResult, ScanSettings, SizePoint, SizeScan,
    SizeStat, NOISE_FLOOR,
};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{Observable, RelaxationCurve};
use crate::error::{invalid, Error, Result};

pub const MIN_FIT_POINTS: usize = 10;
const BETA_BOUNDS: (f64, f64) = (0.01, 1.5);
const AMPLITUDE_MAX: f64 = 1.1;

/// `f(tau) = A exp[-(gamma tau)^beta]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StretchedExpFit {
    pub amplitude: f64,
    pub gamma: f64,
    pub beta: f64,
    /// Covariance of `(A, gamma, beta)`.
    pub covariance: [[f64; 3]; 3],
    /// Root-mean-square residual over the fit window.
    pub residual_norm: f64,
    pub points: usize,
    pub iterations: usize,
    pub converged: bool,
}

impl StretchedExpFit {
    pub fn amplitude_err(&self) -> f64 {
        self.covariance[0][0].sqrt()
    }
    pub fn gamma_err(&self) -> f64 {
        self.covariance[1][1].sqrt()
    }
    pub fn beta_err(&self) -> f64 {
        self.covariance[2][2].sqrt()
    }

    pub fn eval(&self, tau: f64) -> f64 {
        self.amplitude * (-(self.gamma * tau).powf(self.beta)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Starting stretch power; `d / alpha` from the curve metadata if unset.
    pub beta_guess: Option<f64>,
    /// Points must exceed this multiple of their standard error.
    pub noise_multiple: f64,
    /// Points must exceed this fraction of the first value.
    pub floor: f64,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { beta_guess: None, noise_multiple: 10.0, floor: 1e-6, max_iterations: 500 }
    }
}

/// Fit a relaxation curve. Purity is fitted as `2 (p - 1/2)`; `baseline`
/// overrides the plateau `b`, which is removed as `(v - b) / (1 - b)`.
pub fn fit_stretched_exponential(curve: &RelaxationCurve, baseline: Option<f64>) -> Result<StretchedExpFit> {
    fit_stretched_exponential_with(curve, baseline, FitOptions::default())
}

pub fn fit_stretched_exponential_with(
    curve: &RelaxationCurve,
    baseline: Option<f64>,
    options: FitOptions,
) -> Result<StretchedExpFit> {
    let b = baseline.unwrap_or(match curve.observable {
        Observable::Purity => 0.5,
        _ => 0.0,
    });
    if !(b < 1.0) {
        return Err(invalid(format!("baseline must be below 1, got {b}")));
    }
    let scale = 1.0 / (1.0 - b);
    let y: Vec<f64> = curve.values.iter().map(|v| (v - b) * scale).collect();
    let sigma: Vec<f64> = curve.stderr.iter().map(|e| e * scale).collect();
    let beta_guess = options.beta_guess.or_else(|| match (curve.meta.d, curve.meta.alpha) {
        (Some(d), Some(a)) => Some(d as f64 / a),
        _ => None,
    });
    fit_points(curve.grid.values(), &y, &sigma, FitOptions { beta_guess, ..options })
}

/// Fit raw `(tau, y)` data with optional per-point standard errors.
pub fn fit_points(tau: &[f64], y: &[f64], sigma: &[f64], options: FitOptions) -> Result<StretchedExpFit> {
    if tau.len() != y.len() || (!sigma.is_empty() && sigma.len() != y.len()) {
        return Err(invalid("time, value and error arrays differ in length"));
    }
    let y0 = tau.iter().zip(y).find(|(t, _)| **t > 0.0).map(|(_, v)| *v).unwrap_or(0.0);
    let (t, v): (Vec<f64>, Vec<f64>) = tau
        .iter()
        .zip(y)
        .enumerate()
        .filter(|&(i, (&t, &v))| {
            let e = sigma.get(i).copied().unwrap_or(0.0);
            t > 0.0 && v > 0.0 && v > options.noise_multiple * e && v > options.floor * y0.abs()
        })
        .map(|(_, (&t, &v))| (t, v))
        .unzip();
    if t.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientData { required: MIN_FIT_POINTS, got: t.len() });
    }
    let a0 = v[0];
    if !v.iter().any(|&x| x < 0.9 * a0) {
        return Err(Error::DegenerateCurve);
    }

    // work in time units of the window's geometric mean
    let t_ref = (t.iter().map(|x| x.ln()).sum::<f64>() / t.len() as f64).exp();
    let s: Vec<f64> = t.iter().map(|x| x / t_ref).collect();
    let log_s: Vec<f64> = s.iter().map(|x| x.ln()).collect();

    let primary = options.beta_guess.unwrap_or(0.7).clamp(BETA_BOUNDS.0, BETA_BOUNDS.1);
    let mut best: Option<Solution> = None;
    for beta0 in [primary, 0.5, 1.0, 0.3] {
        let start = initial_guess(&s, &v, a0.min(AMPLITUDE_MAX), beta0);
        let sol = levenberg_marquardt(&log_s, &v, start, options.max_iterations);
        let better = match &best {
            None => true,
            Some(b) => sol.cost < b.cost * (1.0 - 1e-12),
        };
        if better {
            best = Some(sol);
        }
        if best.as_ref().is_some_and(|b| b.converged) && beta0 == primary {
            break;
        }
    }
    let sol = best.expect("at least one start");
    Ok(finish(sol, &log_s, &v, t_ref))
}

/// `A0` from the first point, `gamma0` from the `A0 / e` crossing.
fn initial_guess(s: &[f64], v: &[f64], a0: f64, beta0: f64) -> [f64; 3] {
    let target = a0 / std::f64::consts::E;
    let crossing = s.iter().zip(v).position(|(_, &y)| y < target);
    let log_gamma = match crossing {
        Some(k) if k > 0 => {
            // log-linear interpolation between the bracketing points
            let (y1, y2) = (v[k - 1].ln(), v[k].ln());
            let w = ((target.ln() - y1) / (y2 - y1)).clamp(0.0, 1.0);
            let ls = s[k - 1].ln() * (1.0 - w) + s[k].ln() * w;
            -ls
        }
        _ => {
            let k = s.len() - 1;
            let z = (a0 / v[k]).ln().max(1e-3);
            z.ln() / beta0 - s[k].ln()
        }
    };
    [a0, log_gamma, beta0]
}

struct Solution {
    params: [f64; 3],
    cost: f64,
    iterations: usize,
    converged: bool,
}

/// Residuals and Jacobian in the parameters `(A, ln gamma, beta)`.
fn evaluate(log_s: &[f64], v: &[f64], p: &[f64; 3], jac: Option<&mut Vec<[f64; 3]>>) -> (Vec<f64>, f64) {
    let [a, lg, beta] = *p;
    let mut r = Vec::with_capacity(v.len());
    let mut cost = 0.0;
    let mut rows = Vec::new();
    for (&ls, &y) in log_s.iter().zip(v) {
        let lz = lg + ls;
        let z = (beta * lz).exp();
        let e = (-z).exp();
        let f = a * e;
        r.push(f - y);
        cost += (f - y) * (f - y);
        if jac.is_some() {
            rows.push([e, -f * z * beta, -f * z * lz]);
        }
    }
    if let Some(j) = jac {
        *j = rows;
    }
    (r, 0.5 * cost)
}

fn project(p: [f64; 3]) -> [f64; 3] {
    [
        p[0].clamp(f64::MIN_POSITIVE, AMPLITUDE_MAX),
        p[1],
        p[2].clamp(BETA_BOUNDS.0, BETA_BOUNDS.1),
    ]
}

fn normal_equations(jac: &[[f64; 3]], r: &[f64]) -> (Matrix3<f64>, Vector3<f64>) {
    let mut jtj = Matrix3::zeros();
    let mut jtr = Vector3::zeros();
    for (row, &ri) in jac.iter().zip(r) {
        for a in 0..3 {
            jtr[a] += row[a] * ri;
            for b in 0..3 {
                jtj[(a, b)] += row[a] * row[b];
            }
        }
    }
    (jtj, jtr)
}

fn levenberg_marquardt(log_s: &[f64], v: &[f64], start: [f64; 3], max_iterations: usize) -> Solution {
    let mut p = project(start);
    let mut jac = Vec::new();
    let (mut r, mut cost) = evaluate(log_s, v, &p, Some(&mut jac));
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iterations {
        iterations += 1;
        let (jtj, jtr) = normal_equations(&jac, &r);
        if jtr.amax() <= 1e-15 * (1.0 + cost.sqrt()) {
            converged = true;
            break;
        }
        let mut accepted = false;
        while lambda < 1e16 {
            let mut damped = jtj;
            for k in 0..3 {
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-30);
            }
            let Some(step) = damped.lu().solve(&(-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let trial = project([p[0] + step[0], p[1] + step[1], p[2] + step[2]]);
            let (_, trial_cost) = evaluate(log_s, v, &trial, None);
            if trial_cost.is_finite() && trial_cost <= cost {
                // the valley is flat, so stop on the step and not on the cost change
                let moved = (0..3).map(|k| (trial[k] - p[k]).abs() / (1.0 + p[k].abs())).fold(0.0, f64::max);
                p = trial;
                (r, cost) = evaluate(log_s, v, &p, Some(&mut jac));
                lambda = (lambda * 0.3).max(1e-12);
                accepted = true;
                if moved < 1e-13 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted || converged {
            // a rejected step at huge damping means no descent direction is left
            converged = converged || !accepted;
            break;
        }
    }
    // cost differences vanish in rounding before the parameters settle, so
    // finish with Gauss-Newton steps judged by the gradient norm instead
    let mut grad = normal_equations(&jac, &r).1.norm();
    for _ in 0..20 {
        let (jtj, jtr) = normal_equations(&jac, &r);
        let Some(step) = jtj.lu().solve(&(-jtr)) else { break };
        let trial = project([p[0] + step[0], p[1] + step[1], p[2] + step[2]]);
        let mut trial_jac = Vec::new();
        let (trial_r, trial_cost) = evaluate(log_s, v, &trial, Some(&mut trial_jac));
        let trial_grad = normal_equations(&trial_jac, &trial_r).1.norm();
        if !(trial_grad < grad) || !(trial_cost <= cost * (1.0 + 1e-12)) {
            break;
        }
        (p, r, jac, cost, grad) = (trial, trial_r, trial_jac, trial_cost, trial_grad);
    }
    Solution { params: p, cost, iterations, converged }
}

fn finish(sol: Solution, log_s: &[f64], v: &[f64], t_ref: f64) -> StretchedExpFit {
    let mut jac = Vec::new();
    let (r, cost) = evaluate(log_s, v, &sol.params, Some(&mut jac));
    let m = v.len();
    let (jtj, _) = normal_equations(&jac, &r);
    let s2 = 2.0 * cost / (m as f64 - 3.0);
    let [a, lg, beta] = sol.params;
    let gamma = lg.exp() / t_ref;
    // map the (A, ln gamma, beta) covariance to (A, gamma, beta)
    let scale = [1.0, gamma, 1.0];
    let mut covariance = [[f64::NAN; 3]; 3];
    if let Some(inv) = jtj.try_inverse() {
        for i in 0..3 {
            for k in 0..3 {
                covariance[i][k] = s2 * inv[(i, k)] * scale[i] * scale[k];
            }
        }
    }
    StretchedExpFit {
        amplitude: a,
        gamma,
        beta,
        covariance,
        residual_norm: (2.0 * cost / m as f64).sqrt(),
        points: m,
        iterations: sol.iterations,
        converged: sol.converged,
    }
}

/// `y = prefactor * x^(-exponent)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub prefactor: f64,
    pub exponent: f64,
    pub stderr_exponent: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Ordinary least squares of `ln y` on `ln x`.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit> {
    if points.len() < 3 {
        return Err(Error::InsufficientData { required: 3, got: points.len() });
    }
    if let Some(&(x, y)) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(Error::NonPositiveValue { x, y });
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(invalid("all x values coincide"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let stderr = if points.len() > 2 { (sse / (n - 2.0) / sxx).sqrt() } else { f64::NAN };
    Ok(PowerLawFit {
        prefactor: intercept.exp(),
        exponent: -slope,
        stderr_exponent: stderr,
        r_squared,
        points: points.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{CurveMeta, TimeGrid};

    fn synthetic(a: f64, gamma: f64, beta: f64, grid: &TimeGrid) -> RelaxationCurve {
        let values = grid.values().iter().map(|t| a * (-(gamma * t).powf(beta)).exp()).collect();
        RelaxationCurve::new(grid.clone(), values, Observable::Magnetization, CurveMeta::default())
    }

    #[test]
    fn recovers_noiseless_parameters() {
        let grid = TimeGrid::log_spaced(1e-2, 1e2, 200).unwrap();
        for (a, g, b) in [(0.5, 1.0, 0.5), (0.5, 3.0, 1.0), (1.0, 0.2, 0.3), (0.9, 10.0, 1.4), (0.05, 1.0, 0.8)] {
            let fit = fit_stretched_exponential(&synthetic(a, g, b, &grid), None).unwrap();
            assert!(fit.converged);
            assert!(((fit.amplitude - a) / a).abs() < 1e-6, "A {a} {g} {b}: {fit:?}");
            assert!(((fit.gamma - g) / g).abs() < 1e-6, "gamma {a} {g} {b}: {fit:?}");
            assert!(((fit.beta - b) / b).abs() < 1e-6, "beta {a} {g} {b}: {fit:?}");
        }
    }

    #[test]
    fn purity_baseline_removed() {
        let grid = TimeGrid::log_spaced(1e-2, 1e2, 100).unwrap();
        let values = grid.values().iter().map(|t| 0.5 * (1.0 + (-(2.0 * t).powf(0.5)).exp())).collect();
        let curve = RelaxationCurve::new(grid, values, Observable::Purity, CurveMeta::default());
        let fit = fit_stretched_exponential(&curve, None).unwrap();
        assert!((fit.amplitude - 1.0).abs() < 1e-6);
        assert!((fit.gamma - 2.0).abs() < 1e-6);
        assert!((fit.beta - 0.5).abs() < 1e-6);
    }

    #[test]
    fn window_errors() {
        let grid = TimeGrid::log_spaced(1e-2, 1e-1, 8).unwrap();
        assert!(matches!(
            fit_stretched_exponential(&synthetic(0.5, 1.0, 0.5, &grid), None),
            Err(Error::InsufficientData { .. })
        ));
        let flat = TimeGrid::log_spaced(1e-6, 1e-4, 50).unwrap();
        assert!(matches!(fit_stretched_exponential(&synthetic(0.5, 1.0, 1.0, &flat), None), Err(Error::DegenerateCurve)));
    }

    #[test]
    fn noise_window_drops_points() {
        let grid = TimeGrid::log_spaced(1e-2, 1e2, 60).unwrap();
        let mut c = synthetic(0.5, 1.0, 0.5, &grid);
        c.stderr = vec![1e-3; 60];
        let fit = fit_stretched_exponential(&c, None).unwrap();
        assert!(fit.points < 60);
        assert!(c.values.iter().filter(|v| **v > 1e-2).count() == fit.points);
    }

    #[test]
    fn power_law_exact() {
        let pts: Vec<(f64, f64)> = [10.0, 20.0, 40.0, 80.0].iter().map(|&n: &f64| (n, 3.0 * n.powf(-0.7))).collect();
        let fit = fit_power_law(&pts).unwrap();
        assert!((fit.exponent - 0.7).abs() < 1e-12);
        assert!((fit.prefactor - 3.0).abs() < 1e-11);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!(matches!(fit_power_law(&[(1.0, 1.0), (2.0, -1.0), (3.0, 1.0)]), Err(Error::NonPositiveValue { .. })));
        assert!(fit_power_law(&pts[..2]).is_err());
    }
}
