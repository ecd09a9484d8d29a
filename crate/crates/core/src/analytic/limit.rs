//! Finite-cutoff disorder average evaluated by quadrature.
//!
//! With `N'` spins uniform in the shell `rb < r < r0`, each of the `N' - 1`
//! partners contributes the factor
//! `I_j = d / (r0^d - rb^d) * int r^(d-1) cos^j(2 C tau / r^alpha) dr`.
//! Under `u = 2 C tau / r^alpha` this becomes
//! `K * int_{u0}^{ub} u^(-1-beta) cos^j(u) du` with the prefactor
//! `K = d (2 C tau)^beta / (alpha (r0^d - rb^d))`, and the same prefactor
//! integrates `u^(-1-beta)` to exactly one. The deficit
//! `1 - I_j = K * int u^(-1-beta) (1 - cos^j u) du`
//! has a positive integrand and is computed without cancellation.

use super::quadrature::{cosine_power_mean, integrate, power_weighted_oscillation, CosinePowerWeight, Tolerance};
use super::ModelParameters;
use crate::dynamics::{CurveMeta, Observable, RelaxationCurve, TimeGrid};
use crate::ensemble::unit_ball_volume;
use crate::error::{invalid, Result};
use std::f64::consts::PI;

/// Below this `u` the deficit integrand is integrated directly; above it
/// the mean and oscillating parts of `1 - cos^j` are handled separately.
const DIRECT_LIMIT: f64 = 4.0 * PI;

#[derive(Debug, Clone, Copy)]
pub struct CutoffIntegralConfig {
    pub rb: f64,
    pub r0: f64,
    pub n_prime: usize,
    pub tolerance: Tolerance,
}

impl CutoffIntegralConfig {
    pub fn new(rb: f64, r0: f64, n_prime: usize) -> Result<Self> {
        let c = Self { rb, r0, n_prime, tolerance: Tolerance::new(1e-300, 1e-10) };
        c.check()?;
        Ok(c)
    }

    /// Ball radius holding `n_prime` spins at the model density, with
    /// `rb = rb_ratio * r0`.
    pub fn for_density(params: &ModelParameters, n_prime: usize, rb_ratio: f64) -> Result<Self> {
        params.check()?;
        let r0 = (n_prime as f64 / (params.density * unit_ball_volume(params.d))).powf(1.0 / params.d as f64);
        Self::new(rb_ratio * r0, r0, n_prime)
    }

    fn check(&self) -> Result<()> {
        if !(self.rb > 0.0 && self.rb < self.r0 && self.r0.is_finite()) {
            return Err(invalid(format!("need 0 < rb < r0, got rb={} r0={}", self.rb, self.r0)));
        }
        if self.n_prime < 2 {
            return Err(invalid("need at least two spins"));
        }
        Ok(())
    }

    fn implied_density(&self, d: usize) -> f64 {
        self.n_prime as f64 / (unit_ball_volume(d) * self.r0.powi(d as i32))
    }
}

/// `1 - cos^j u = 2 sin^2(u/2) (1 + c + ... + c^(j-1))`, accurate for small `u`.
fn one_minus_cos_power(u: f64, j: u32) -> f64 {
    let c = u.cos();
    let mut sum = 0.0;
    let mut p = 1.0;
    for _ in 0..j {
        sum += p;
        p *= c;
    }
    2.0 * (0.5 * u).sin().powi(2) * sum
}

/// `int_{u0}^{ub} u^(-1-beta) (1 - cos^j u) du`.
fn deficit_integral(j: u32, beta: f64, u0: f64, ub: f64, tol: Tolerance) -> Result<f64> {
    let s = 1.0 + beta;
    let weight = CosinePowerWeight::new(j);
    let full = |u: f64| u.powf(-s) * one_minus_cos_power(u, j);
    if ub <= DIRECT_LIMIT {
        return Ok(integrate(full, u0, ub, tol)?.value);
    }
    let split = u0.max(DIRECT_LIMIT);
    let direct = if u0 < split { integrate(full, u0, split, tol)?.value } else { 0.0 };
    // int u^(-s) from split to ub, in closed form
    let power = (split.powf(-beta) - ub.powf(-beta)) / beta;
    let smooth = direct + (1.0 - cosine_power_mean(j)) * power;
    // the oscillating part never exceeds the smooth part; size its error to the total
    let osc_tol = Tolerance { abs: tol.abs.max(tol.rel * smooth), ..tol };
    let oscillation = power_weighted_oscillation(&weight, s, split, ub, osc_tol)?.value;
    Ok(smooth - oscillation)
}

/// `I_j^(N'-1)`, keeping the sign when `I_j` is negative.
fn partner_product(j: u32, params: &ModelParameters, config: &CutoffIntegralConfig, tau: f64) -> Result<f64> {
    if tau == 0.0 {
        return Ok(1.0);
    }
    let d = params.d as f64;
    let beta = params.stretch_power();
    let omega = 2.0 * params.c_alpha * tau;
    let u0 = omega / config.r0.powf(params.alpha);
    let ub = omega / config.rb.powf(params.alpha);
    let shell = config.r0.powf(d) - config.rb.powf(d);
    let k = d * omega.powf(beta) / (params.alpha * shell);
    let deficit = k * deficit_integral(j, beta, u0, ub, config.tolerance)?;
    let partners = (config.n_prime - 1) as f64;
    if deficit < 1.0 {
        Ok((partners * (-deficit).ln_1p()).exp())
    } else {
        let base = 1.0 - deficit;
        let sign = if base < 0.0 && (config.n_prime - 1) % 2 == 1 { -1.0 } else { 1.0 };
        Ok(sign * (partners * base.abs().ln()).exp())
    }
}

fn check_consistency(params: &ModelParameters, config: &CutoffIntegralConfig, grid: &TimeGrid) -> Result<()> {
    params.check()?;
    config.check()?;
    let implied = config.implied_density(params.d);
    if ((implied - params.density) / params.density).abs() > 1e-6 {
        return Err(invalid(format!(
            "cutoff configuration implies density {implied}, model has {}",
            params.density
        )));
    }
    if grid.values().iter().any(|t| *t < 0.0) {
        return Err(invalid("times must be non-negative"));
    }
    Ok(())
}

fn limit_meta(params: &ModelParameters, config: &CutoffIntegralConfig, grid: &TimeGrid) -> CurveMeta {
    CurveMeta {
        n_spins: Some(config.n_prime),
        n_samples: 0,
        d: Some(params.d),
        alpha: Some(params.alpha),
        x: Some(config.n_prime as f64 * (config.rb / config.r0).powi(params.d as i32)),
        rb: Some(config.rb),
        r0: Some(config.r0),
        master_seed: None,
        j_nn: grid.unit_scale(),
        source: "cutoff_quadrature".into(),
    }
}

/// Disorder-averaged magnetization `I_1^(N'-1) / 2` of the finite system.
pub fn verify_thermodynamic_limit(
    params: &ModelParameters,
    config: &CutoffIntegralConfig,
    grid: &TimeGrid,
) -> Result<RelaxationCurve> {
    check_consistency(params, config, grid)?;
    let values = grid
        .values()
        .iter()
        .map(|&t| partner_product(1, params, config, t).map(|v| 0.5 * v))
        .collect::<Result<Vec<f64>>>()?;
    Ok(RelaxationCurve::new(grid.clone(), values, Observable::Magnetization, limit_meta(params, config, grid)))
}

/// Disorder-averaged `j`-th moment `I_j^(N'-1)` of the finite system.
pub fn verify_moment_limit(
    j: u32,
    params: &ModelParameters,
    config: &CutoffIntegralConfig,
    grid: &TimeGrid,
) -> Result<RelaxationCurve> {
    if j == 0 {
        return Err(invalid("moment order must be >= 1"));
    }
    check_consistency(params, config, grid)?;
    let values = grid
        .values()
        .iter()
        .map(|&t| partner_product(j, params, config, t))
        .collect::<Result<Vec<f64>>>()?;
    Ok(RelaxationCurve::new(grid.clone(), values, Observable::Moment(j), limit_meta(params, config, grid)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{analytic_magnetization, analytic_moment, poisson_median_nn_coupling};

    fn setup(d: usize, alpha: f64, n_prime: usize, ratio: f64) -> (ModelParameters, CutoffIntegralConfig, TimeGrid) {
        let params = ModelParameters::new(d, alpha, 1.0, 1.0).unwrap();
        let config = CutoffIntegralConfig::for_density(&params, n_prime, ratio).unwrap();
        let jnn = poisson_median_nn_coupling(&params);
        let grid = TimeGrid::log_in_nn_units(0.1, 10.0, 25, jnn).unwrap();
        (params, config, grid)
    }

    fn max_rel_dev(params: &ModelParameters, curve: &RelaxationCurve) -> f64 {
        curve
            .grid
            .values()
            .iter()
            .zip(&curve.values)
            .map(|(&t, v)| {
                let a = analytic_magnetization(params, t).unwrap();
                ((v - a) / a).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn time_zero_is_exact() {
        let (p, c, _) = setup(3, 6.0, 100, 1e-2);
        let grid = TimeGrid::new(vec![0.0], None).unwrap();
        assert_eq!(verify_thermodynamic_limit(&p, &c, &grid).unwrap().values[0], 0.5);
    }

    #[test]
    fn direct_quadrature_agrees_with_split() {
        // brute-force integration of the radial form for a small system
        let (p, c, grid) = setup(3, 6.0, 50, 0.2);
        let curve = verify_thermodynamic_limit(&p, &c, &grid).unwrap();
        for (&t, v) in grid.values().iter().zip(&curve.values) {
            let f = |r: f64| r * r * (2.0 * t / r.powi(6)).cos();
            let tol = Tolerance::new(1e-14, 1e-12);
            let mut sum = 0.0;
            // equal slices in r; the oscillation is confined near rb
            let slices = 4000;
            let h = (c.r0 - c.rb) / slices as f64;
            for s in 0..slices {
                let a = c.rb + s as f64 * h;
                sum += integrate(f, a, a + h, tol).unwrap().value;
            }
            let i1 = 3.0 * sum / (c.r0.powi(3) - c.rb.powi(3));
            let expect = 0.5 * i1.powi(49);
            assert!((v - expect).abs() < 1e-9, "tau={t}: {v} vs {expect}");
        }
    }

    #[test]
    fn converges_for_van_der_waals() {
        let (p, c, grid) = setup(3, 6.0, 10_000, 1e-3);
        let curve = verify_thermodynamic_limit(&p, &c, &grid).unwrap();
        assert!(max_rel_dev(&p, &curve) < 0.01);
    }

    #[test]
    fn deviation_shrinks_as_cutoffs_move_out() {
        let mut last = f64::INFINITY;
        for (n, ratio) in [(1_000, 4e-3), (8_000, 2e-3), (64_000, 1e-3)] {
            let (p, c, grid) = setup(3, 6.0, n, ratio);
            let dev = max_rel_dev(&p, &verify_thermodynamic_limit(&p, &c, &grid).unwrap());
            assert!(dev < last, "{dev} >= {last}");
            last = dev;
        }
    }

    #[test]
    fn second_moment_tracks_purity_rate() {
        let (p, c, grid) = setup(3, 6.0, 10_000, 1e-3);
        let curve = verify_moment_limit(2, &p, &c, &grid).unwrap();
        for (&t, v) in grid.values().iter().zip(&curve.values) {
            let a = analytic_moment(2, &p, t).unwrap();
            assert!(((v - a) / a).abs() < 0.02, "tau={t}");
        }
    }

    #[test]
    fn rejects_inconsistent_density() {
        let (p, mut c, grid) = setup(3, 6.0, 100, 1e-2);
        c.r0 *= 1.1;
        assert!(verify_thermodynamic_limit(&p, &c, &grid).is_err());
        assert!(CutoffIntegralConfig::new(1.0, 1.0, 10).is_err());
        assert!(CutoffIntegralConfig::new(0.1, 1.0, 1).is_err());
    }
}
