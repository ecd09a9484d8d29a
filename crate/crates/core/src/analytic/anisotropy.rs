//! Angular factor `chi = <|f(direction)|^(d/alpha)>` over the unit sphere.

use std::f64::consts::PI;

use super::quadrature::{integrate, Tolerance};
use crate::couplings::Anisotropy;
use crate::error::{invalid, Error, Result};

const TOL: Tolerance = Tolerance { abs: 1e-14, rel: 1e-12, max_panels: 20_000 };
const INNER_TOL: Tolerance = Tolerance { abs: 1e-13, rel: 1e-11, max_panels: 20_000 };

pub fn anisotropy_chi(anisotropy: &Anisotropy, d: usize, alpha: f64) -> Result<f64> {
    if d < 1 || !(alpha.is_finite() && alpha >= d as f64) {
        return Err(Error::DomainError { d, alpha });
    }
    let beta = d as f64 / alpha;
    match anisotropy {
        Anisotropy::Isotropic => Ok(1.0),
        Anisotropy::Constant(c) => Ok(c.abs().powf(beta)),
        Anisotropy::Dipolar => dipolar_chi(d, beta),
        Anisotropy::Custom(f) => custom_chi(&**f, d, beta),
    }
}

/// The dipolar weight only sees the polar angle from the last axis, whose
/// measure on the sphere is `sin^(d-2) theta d theta`.
fn dipolar_chi(d: usize, beta: f64) -> Result<f64> {
    let g = |c: f64| (1.0 - 3.0 * c * c).abs().powf(beta);
    if d == 1 {
        return Ok(g(1.0));
    }
    let measure = |t: f64| t.sin().powi(d as i32 - 2);
    let kink = (1.0 / 3f64.sqrt()).acos();
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in [(0.0, kink), (kink, PI - kink), (PI - kink, PI)] {
        num += integrate(|t| measure(t) * g(t.cos()), a, b, TOL)?.value;
        den += integrate(measure, a, b, TOL)?.value;
    }
    Ok(num / den)
}

fn custom_chi(f: &(dyn Fn(&[f64]) -> f64 + Send + Sync), d: usize, beta: f64) -> Result<f64> {
    let g = |dir: &[f64]| f(dir).abs().powf(beta);
    match d {
        1 => Ok(0.5 * (g(&[1.0]) + g(&[-1.0]))),
        2 => Ok(integrate(|t| g(&[t.cos(), t.sin()]), 0.0, 2.0 * PI, TOL)?.value / (2.0 * PI)),
        3 => {
            // outer over the polar angle from the last axis
            let outer = |t: f64| {
                let (s, c) = t.sin_cos();
                let ring = integrate(|p: f64| g(&[s * p.cos(), s * p.sin(), c]), 0.0, 2.0 * PI, INNER_TOL);
                ring.map(|r| r.value * s).unwrap_or(f64::NAN)
            };
            let total = integrate(outer, 0.0, PI, INNER_TOL)?.value;
            if !total.is_finite() {
                return Err(Error::QuadratureFailure { tolerance: INNER_TOL.rel, estimate: f64::NAN });
            }
            Ok(total / (4.0 * PI))
        }
        _ => Err(invalid(format!("custom anisotropy averages are implemented for d <= 3, got d={d}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn trivial_cases() {
        assert_eq!(anisotropy_chi(&Anisotropy::Isotropic, 3, 6.0).unwrap(), 1.0);
        let c = anisotropy_chi(&Anisotropy::Constant(-0.25), 2, 4.0).unwrap();
        assert!((c - 0.5).abs() < 1e-15);
        assert!(anisotropy_chi(&Anisotropy::Dipolar, 3, 2.0).is_err());
    }

    #[test]
    fn dipolar_three_dimensions() {
        let chi = anisotropy_chi(&Anisotropy::Dipolar, 3, 3.0).unwrap();
        assert!((chi - 4.0 / (3.0 * 3f64.sqrt())).abs() < 1e-10);
    }

    #[test]
    fn custom_matches_dipolar() {
        let custom = Anisotropy::Custom(Arc::new(|v: &[f64]| 1.0 - 3.0 * v[v.len() - 1].powi(2)));
        for (d, alpha) in [(2, 2.0), (2, 4.0), (3, 3.0), (3, 6.0)] {
            let a = anisotropy_chi(&Anisotropy::Dipolar, d, alpha).unwrap();
            let b = anisotropy_chi(&custom, d, alpha).unwrap();
            assert!((a - b).abs() < 1e-8, "d={d} alpha={alpha}: {a} vs {b}");
        }
    }

    #[test]
    fn unit_custom_is_one() {
        let one = Anisotropy::Custom(Arc::new(|_: &[f64]| 1.0));
        for d in 1..=3 {
            assert!((anisotropy_chi(&one, d, 6.0).unwrap() - 1.0).abs() < 1e-12);
        }
        assert!(anisotropy_chi(&one, 4, 6.0).is_err());
    }
}
