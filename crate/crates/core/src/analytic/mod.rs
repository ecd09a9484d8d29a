//! Thermodynamic-limit closed forms.
//!
//! For density `n`, dimension `d` and exponent `alpha >= d` the disorder
//! averaged magnetization is `exp[-(gamma_m tau)^beta] / 2` with
//! `beta = d / alpha` and `gamma_m^beta = kappa * Gamma(1 - beta) *
//! sin(pi (1 - beta) / 2)`, where
//! `kappa = pi^(d/2) n (2 C)^(d/alpha) / Gamma(d/2 + 1)`.
//! The `j`-th moment decays with the harmonic-weighted coefficient
//! `sum_i binom(j, i) 2^-j |j - 2i|^beta` times that of the magnetization.

mod anisotropy;
mod limit;
pub mod quadrature;

pub use anisotropy::anisotropy_chi;
pub use limit::{verify_moment_limit, verify_thermodynamic_limit, CutoffIntegralConfig};

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use std::f64::consts::{LN_2, PI};

use crate::couplings::Anisotropy;
use crate::dynamics::{CurveMeta, Observable, RelaxationCurve, TimeGrid};
use crate::ensemble::unit_ball_volume;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParameters {
    pub d: usize,
    pub alpha: f64,
    /// Spins per unit volume.
    pub density: f64,
    pub c_alpha: f64,
}

impl ModelParameters {
    pub fn new(d: usize, alpha: f64, density: f64, c_alpha: f64) -> Result<Self> {
        let p = Self { d, alpha, density, c_alpha };
        p.check()?;
        Ok(p)
    }

    /// Density of `n` spins in a ball of radius `r0`.
    pub fn from_ball(d: usize, alpha: f64, n: usize, r0: f64, c_alpha: f64) -> Result<Self> {
        let volume = unit_ball_volume(d) * r0.powi(d as i32);
        Self::new(d, alpha, n as f64 / volume, c_alpha)
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.d < 1 {
            return Err(invalid("dimension must be at least 1"));
        }
        if !(self.density > 0.0 && self.density.is_finite()) {
            return Err(invalid(format!("density must be positive, got {}", self.density)));
        }
        if !(self.c_alpha > 0.0 && self.c_alpha.is_finite()) {
            return Err(invalid(format!("C_alpha must be positive, got {}", self.c_alpha)));
        }
        if !(self.alpha.is_finite() && self.alpha >= self.d as f64) {
            return Err(Error::DomainError { d: self.d, alpha: self.alpha });
        }
        Ok(())
    }

    /// `beta = d / alpha`.
    pub fn stretch_power(&self) -> f64 {
        self.d as f64 / self.alpha
    }

    pub fn is_exponential(&self) -> bool {
        self.alpha == self.d as f64
    }
}

/// `kappa = pi^(d/2) n (2 C)^(d/alpha) / Gamma(d/2 + 1)`.
pub fn kappa(params: &ModelParameters) -> f64 {
    let d = params.d as f64;
    PI.powf(d / 2.0) * params.density * (2.0 * params.c_alpha).powf(d / params.alpha) / gamma(d / 2.0 + 1.0)
}

/// `Gamma(1 - beta) sin(pi (1 - beta) / 2)`, equal to `pi / 2` at `alpha = d`.
fn gamma_sine_factor(d: usize, alpha: f64) -> f64 {
    let eps = (alpha - d as f64) / alpha;
    if eps == 0.0 {
        PI / 2.0
    } else {
        gamma(eps) * (0.5 * PI * eps).sin()
    }
}

fn check_domain(d: usize, alpha: f64) -> Result<()> {
    if d < 1 || !(alpha.is_finite() && alpha >= d as f64) {
        return Err(Error::DomainError { d, alpha });
    }
    Ok(())
}

/// Limit of `int_0^Y sin(y^alpha) y^(alpha - d - 1) dy` as `Y -> inf`:
/// `Gamma((alpha - d)/alpha) sin(pi (alpha - d) / (2 alpha)) / alpha`.
pub fn fresnel_asymptote(d: usize, alpha: f64) -> Result<f64> {
    check_domain(d, alpha)?;
    Ok(gamma_sine_factor(d, alpha) / alpha)
}

/// `gamma_m^beta`, the coefficient of `tau^beta` in the exponent.
pub fn exponent_coefficient(params: &ModelParameters) -> Result<f64> {
    params.check()?;
    Ok(kappa(params) * gamma_sine_factor(params.d, params.alpha))
}

pub fn analytic_magnetization(params: &ModelParameters, tau: f64) -> Result<f64> {
    Ok(0.5 * analytic_moment(1, params, tau)?)
}

/// `(1 + exp[-(gamma_p tau)^beta]) / 2`.
pub fn analytic_purity(params: &ModelParameters, tau: f64) -> Result<f64> {
    Ok(0.5 * (1.0 + analytic_moment(2, params, tau)?))
}

/// `exp[-(gamma_j tau)^beta]`, the limit of the spin-averaged `j`-th moment.
pub fn analytic_moment(j: u32, params: &ModelParameters, tau: f64) -> Result<f64> {
    if j == 0 {
        return Err(invalid("moment order must be >= 1"));
    }
    if !(tau >= 0.0) {
        return Err(invalid(format!("time must be non-negative, got {tau}")));
    }
    let c = exponent_coefficient(params)? * moment_rate_factor(j, params.stretch_power());
    Ok((-c * tau.powf(params.stretch_power())).exp())
}

/// `sum_i binom(j, i) 2^-j |j - 2i|^beta`, the ratio of the `j`-th moment's
/// exponent coefficient to the magnetization's. The constant harmonic
/// (`j = 2i`) contributes nothing.
pub fn moment_rate_factor(j: u32, beta: f64) -> f64 {
    let scale = 2f64.powi(-(j as i32));
    let mut binom = 1.0;
    let mut total = 0.0;
    for i in 0..=j {
        let m = (j as i64 - 2 * i as i64).unsigned_abs() as f64;
        if m > 0.0 {
            total += binom * scale * m.powf(beta);
        }
        binom *= (j - i) as f64 / (i + 1) as f64;
    }
    total
}

/// Weight of the constant harmonic of `cos^j`, `binom(j, j/2) / 2^j` for
/// even `j`. It is the late-time value of a moment when each spin dephases
/// against a single partner (0.5 for `j = 2`, i.e. purity 0.75), and does
/// not survive in the many-body limit.
pub fn pair_dephasing_plateau(j: u32) -> f64 {
    quadrature::cosine_power_mean(j)
}

/// `gamma_j = [moment_rate_factor(j)]^(alpha/d) * gamma_m`.
pub fn gamma_moment(j: u32, params: &ModelParameters) -> Result<f64> {
    if j == 0 {
        return Err(invalid("moment order must be >= 1"));
    }
    let p = rates(params)?;
    let beta = params.stretch_power();
    Ok(moment_rate_factor(j, beta).powf(1.0 / beta) * p.gamma_m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticPrediction {
    pub kappa: f64,
    pub gamma_m: f64,
    pub beta_m: f64,
    pub gamma_p: f64,
    pub beta_p: f64,
    /// Angular factor `chi`; 1 for isotropic couplings.
    pub chi: f64,
}

impl AnalyticPrediction {
    pub fn is_exponential(&self) -> bool {
        self.beta_m == 1.0
    }
}

pub fn rates(params: &ModelParameters) -> Result<AnalyticPrediction> {
    rates_with_anisotropy(params, &Anisotropy::Isotropic)
}

/// Rates for a factorized anisotropic coupling. The angular average
/// `chi = <|f|^beta>` multiplies the exponent coefficient, so every rate
/// scales by `chi^(alpha/d)` while the stretch power is unchanged.
pub fn rates_with_anisotropy(params: &ModelParameters, anisotropy: &Anisotropy) -> Result<AnalyticPrediction> {
    params.check()?;
    let beta = params.stretch_power();
    let chi = anisotropy_chi(anisotropy, params.d, params.alpha)?;
    let coefficient = exponent_coefficient(params)? * chi;
    let gamma_m = coefficient.powf(1.0 / beta);
    let prediction = AnalyticPrediction {
        kappa: kappa(params),
        gamma_m,
        beta_m: beta,
        gamma_p: 2f64.powf(1.0 - 1.0 / beta) * gamma_m,
        beta_p: beta,
        chi,
    };
    debug_assert!(prediction.beta_m == prediction.beta_p);
    Ok(prediction)
}

/// Median nearest-neighbor coupling of a Poisson gas of density `n`:
/// `C / r^alpha` with `n V_d r^d = ln 2`.
pub fn poisson_median_nn_coupling(params: &ModelParameters) -> f64 {
    let d = params.d as f64;
    let r = (LN_2 / (params.density * unit_ball_volume(params.d))).powf(1.0 / d);
    params.c_alpha / r.powf(params.alpha)
}

/// Closed-form curve for `observable` on `grid`.
pub fn analytic_curve(observable: Observable, params: &ModelParameters, grid: &TimeGrid) -> Result<RelaxationCurve> {
    let values = grid
        .values()
        .iter()
        .map(|&t| match observable {
            Observable::Magnetization => analytic_magnetization(params, t),
            Observable::Purity => analytic_purity(params, t),
            Observable::Moment(j) => analytic_moment(j, params, t),
        })
        .collect::<Result<Vec<f64>>>()?;
    let meta = CurveMeta {
        n_spins: None,
        n_samples: 0,
        d: Some(params.d),
        alpha: Some(params.alpha),
        j_nn: grid.unit_scale(),
        source: "closed_form".into(),
        ..CurveMeta::default()
    };
    Ok(RelaxationCurve::new(grid.clone(), values, observable, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(d: usize, alpha: f64) -> ModelParameters {
        ModelParameters::new(d, alpha, 1.0, 1.0).unwrap()
    }

    #[test]
    fn rejects_short_range_below_dimension() {
        assert!(matches!(ModelParameters::new(3, 2.0, 1.0, 1.0), Err(Error::DomainError { .. })));
        assert!(fresnel_asymptote(2, 1.5).is_err());
        assert!(ModelParameters::new(3, 6.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn kappa_one_dimension() {
        let k = kappa(&ModelParameters::new(1, 1.0, 1.0, 0.5).unwrap());
        assert!((k - 2.0).abs() < 1e-14);
    }

    #[test]
    fn kappa_linear_in_density() {
        let a = kappa(&ModelParameters::new(3, 6.0, 1.0, 1.0).unwrap());
        let b = kappa(&ModelParameters::new(3, 6.0, 2.0, 1.0).unwrap());
        assert!((b - 2.0 * a).abs() < 1e-13 * b);
    }

    #[test]
    fn exponential_branch() {
        let params = p(2, 2.0);
        let r = rates(&params).unwrap();
        assert!(r.is_exponential());
        let k = kappa(&params);
        for tau in [0.0, 0.1, 1.3] {
            let v = analytic_magnetization(&params, tau).unwrap();
            assert!((v - 0.5 * (-PI * k * tau / 2.0).exp()).abs() < 1e-15);
        }
        assert!((fresnel_asymptote(3, 3.0).unwrap() - PI / 6.0).abs() < 1e-15);
    }

    #[test]
    fn van_der_waals_rates() {
        let r = rates(&p(3, 6.0)).unwrap();
        assert_eq!(r.beta_m, 0.5);
        assert_eq!(r.beta_p, 0.5);
        assert!((r.gamma_p / r.gamma_m - 0.5).abs() < 1e-15);
        assert_eq!(r.chi, 1.0);
        assert!(analytic_magnetization(&p(3, 6.0), 0.0).unwrap() == 0.5);
    }

    #[test]
    fn first_moments() {
        for (d, a) in [(1, 1.0), (1, 2.5), (2, 3.0), (3, 6.0), (3, 10.0)] {
            let params = p(d, a);
            let r = rates(&params).unwrap();
            assert_eq!(gamma_moment(1, &params).unwrap(), r.gamma_m);
            let g2 = gamma_moment(2, &params).unwrap();
            assert!((g2 - r.gamma_p).abs() <= 1e-12 * r.gamma_p);
        }
        assert!(gamma_moment(0, &p(3, 6.0)).is_err());
    }

    #[test]
    fn purity_plateau_of_pair_dephasing() {
        assert_eq!(pair_dephasing_plateau(2), 0.5);
        assert_eq!(pair_dephasing_plateau(3), 0.0);
        assert_eq!(pair_dephasing_plateau(4), 0.375);
    }

    #[test]
    fn constant_anisotropy_rescales_rate_linearly() {
        // f = c is the same as C -> c C, which rescales every rate by |c|
        let params = p(3, 6.0);
        let iso = rates(&params).unwrap();
        let aniso = rates_with_anisotropy(&params, &Anisotropy::Constant(0.3)).unwrap();
        let scaled = rates(&ModelParameters::new(3, 6.0, 1.0, 0.3).unwrap()).unwrap();
        assert!((aniso.gamma_m - scaled.gamma_m).abs() < 1e-12 * scaled.gamma_m);
        assert!((aniso.gamma_m - 0.3 * iso.gamma_m).abs() < 1e-12 * iso.gamma_m);
        assert!((aniso.chi - 0.3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn poisson_nn_unit() {
        // 1D: n * 2 * r = ln 2
        let params = ModelParameters::new(1, 2.0, 5.0, 1.0).unwrap();
        let r = LN_2 / 10.0;
        assert!((poisson_median_nn_coupling(&params) - 1.0 / (r * r)).abs() < 1e-9);
    }
}
