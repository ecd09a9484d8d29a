//! Pairwise Ising couplings `J_ik = f(direction) * C / |r_i - r_k|^alpha`.

use std::fmt;
use std::sync::Arc;

use crate::ensemble::{distance, SpinConfiguration};
use crate::error::{invalid, Error, Result};
use crate::stats;

/// Angular weight `f` of a factorized interaction `f(direction) * C / r^alpha`.
///
/// The weight receives the unit vector from spin `i` to spin `k`. It must be
/// even under inversion for the matrix to be symmetric; the matrix is filled
/// from the `i < k` direction and mirrored.
#[derive(Clone, Default)]
pub enum Anisotropy {
    #[default]
    Isotropic,
    /// `1 - 3 cos^2(theta)`, theta measured from the last coordinate axis.
    Dipolar,
    Constant(f64),
    Custom(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

impl Anisotropy {
    pub fn weight(&self, direction: &[f64]) -> f64 {
        match self {
            Anisotropy::Isotropic => 1.0,
            Anisotropy::Dipolar => {
                let c = direction.last().copied().unwrap_or(0.0);
                1.0 - 3.0 * c * c
            }
            Anisotropy::Constant(c) => *c,
            Anisotropy::Custom(f) => f(direction),
        }
    }

    pub fn is_isotropic(&self) -> bool {
        matches!(self, Anisotropy::Isotropic)
    }

    pub fn name(&self) -> String {
        match self {
            Anisotropy::Isotropic => "isotropic".into(),
            Anisotropy::Dipolar => "dipolar".into(),
            Anisotropy::Constant(c) => format!("constant({c})"),
            Anisotropy::Custom(_) => "custom".into(),
        }
    }
}

impl fmt::Debug for Anisotropy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone)]
pub struct CouplingModel {
    alpha: f64,
    c_alpha: f64,
    anisotropy: Anisotropy,
}

impl CouplingModel {
    pub fn isotropic(alpha: f64, c_alpha: f64) -> Result<Self> {
        Self::new(alpha, c_alpha, Anisotropy::Isotropic)
    }

    pub fn new(alpha: f64, c_alpha: f64, anisotropy: Anisotropy) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(invalid(format!("alpha must be positive, got {alpha}")));
        }
        if !(c_alpha > 0.0 && c_alpha.is_finite()) {
            return Err(invalid(format!("C_alpha must be positive, got {c_alpha}")));
        }
        Ok(Self { alpha, c_alpha, anisotropy })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn c_alpha(&self) -> f64 {
        self.c_alpha
    }

    pub fn anisotropy(&self) -> &Anisotropy {
        &self.anisotropy
    }

    /// Coupling between two positions.
    pub fn coupling(&self, a: &[f64], b: &[f64]) -> f64 {
        let r = distance(a, b);
        let radial = self.c_alpha / r.powf(self.alpha);
        if self.anisotropy.is_isotropic() {
            return radial;
        }
        let direction: Vec<f64> = b.iter().zip(a).map(|(x, y)| (x - y) / r).collect();
        self.anisotropy.weight(&direction) * radial
    }
}

/// Dense symmetric coupling matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    n: usize,
    values: Vec<f64>,
}

impl CouplingMatrix {
    /// Matrix from a row-major `n * n` array; must be symmetric with a zero
    /// diagonal and finite entries.
    pub fn from_dense(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(invalid(format!("expected {} entries, got {}", n * n, values.len())));
        }
        for i in 0..n {
            if values[i * n + i] != 0.0 {
                return Err(invalid("diagonal must be zero"));
            }
            for k in (i + 1)..n {
                let (a, b) = (values[i * n + k], values[k * n + i]);
                if a != b || !a.is_finite() {
                    return Err(invalid(format!("entry ({i}, {k}) not symmetric or not finite")));
                }
            }
        }
        Ok(Self { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.values[i * self.n + k]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    /// Strictly upper part of row `i`, i.e. couplings to spins `k > i`.
    pub fn upper_row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n + i + 1..(i + 1) * self.n]
    }

    /// CSV dump, one matrix row per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n {
            let row: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn coupling_matrix(config: &SpinConfiguration, model: &CouplingModel) -> Result<CouplingMatrix> {
    let n = config.len();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        let a = config.position(i);
        for k in (i + 1)..n {
            let b = config.position(k);
            if distance(a, b) == 0.0 {
                return Err(Error::DegenerateGeometry { i, k });
            }
            let j = model.coupling(a, b);
            values[i * n + k] = j;
            values[k * n + i] = j;
        }
    }
    Ok(CouplingMatrix { n, values })
}

/// For each spin, the magnitude of its strongest coupling.
pub fn strongest_couplings(matrix: &CouplingMatrix) -> Vec<f64> {
    (0..matrix.n)
        .map(|i| matrix.row(i).iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .collect()
}

/// Median over spins of the strongest coupling magnitude (`J_NN`).
pub fn median_nn_coupling(matrix: &CouplingMatrix) -> Result<f64> {
    if matrix.n < 2 {
        return Err(Error::InsufficientSpins { required: 2, got: matrix.n });
    }
    Ok(stats::median(&strongest_couplings(matrix)).expect("non-empty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{sample_rsa, BallGeometry};

    fn line(points: &[f64], rb: f64) -> SpinConfiguration {
        let g = BallGeometry::new(1, 10.0, rb).unwrap();
        let pos: Vec<Vec<f64>> = points.iter().map(|&x| vec![x]).collect();
        SpinConfiguration::from_positions(g, &pos, 0).unwrap()
    }

    #[test]
    fn unit_distance_unit_coupling() {
        let m = coupling_matrix(&line(&[0.0, 1.0], 0.0), &CouplingModel::isotropic(3.0, 1.0).unwrap()).unwrap();
        assert_eq!(m.get(0, 1), 1.0);
        assert_eq!(m.get(1, 0), 1.0);
        assert_eq!(m.get(0, 0), 0.0);
    }

    #[test]
    fn van_der_waals_at_distance_two() {
        let m = coupling_matrix(&line(&[-1.0, 1.0], 0.0), &CouplingModel::isotropic(6.0, 1.0).unwrap()).unwrap();
        assert_eq!(m.get(0, 1), 1.0 / 64.0);
    }

    #[test]
    fn dipolar_along_axis() {
        let g = BallGeometry::new(3, 2.0, 0.0).unwrap();
        let c = SpinConfiguration::from_positions(g, &[vec![0.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]], 0).unwrap();
        let model = CouplingModel::new(3.0, 1.0, Anisotropy::Dipolar).unwrap();
        let m = coupling_matrix(&c, &model).unwrap();
        assert!((m.get(0, 1) + 2.0).abs() < 1e-15);
        // perpendicular pair: f = 1
        let c = SpinConfiguration::from_positions(g, &[vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]], 0).unwrap();
        assert!((coupling_matrix(&c, &model).unwrap().get(0, 1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn coincident_spins_are_degenerate() {
        let g = BallGeometry::new(1, 1.0, 0.0).unwrap();
        let c = SpinConfiguration::from_positions(g, &[vec![0.5], vec![0.5]], 0).unwrap();
        let err = coupling_matrix(&c, &CouplingModel::isotropic(6.0, 1.0).unwrap()).unwrap_err();
        assert!(matches!(err, Error::DegenerateGeometry { i: 0, k: 1 }));
    }

    #[test]
    fn median_nn_small_cases() {
        let model = CouplingModel::isotropic(6.0, 1.0).unwrap();
        let pair = coupling_matrix(&line(&[0.0, 1.3], 0.0), &model).unwrap();
        assert_eq!(median_nn_coupling(&pair).unwrap(), pair.get(0, 1).abs());
        let three = coupling_matrix(&line(&[-1.0, 0.0, 1.0], 0.0), &model).unwrap();
        assert_eq!(median_nn_coupling(&three).unwrap(), 1.0);
        let single = coupling_matrix(&line(&[0.0], 0.0), &model).unwrap();
        assert!(matches!(median_nn_coupling(&single), Err(Error::InsufficientSpins { .. })));
    }

    #[test]
    fn median_nn_matches_bruteforce() {
        let g = BallGeometry::new(3, 1.0, 0.0).unwrap();
        let c = sample_rsa(100, g, 21, 0).unwrap();
        let model = CouplingModel::isotropic(6.0, 1.0).unwrap();
        let m = coupling_matrix(&c, &model).unwrap();
        // nearest neighbor by distance, coupled through the closed form
        let mut maxima: Vec<f64> = (0..100)
            .map(|i| {
                let rmin = (0..100)
                    .filter(|&k| k != i)
                    .map(|k| distance(c.position(i), c.position(k)))
                    .fold(f64::INFINITY, f64::min);
                1.0 / rmin.powi(6)
            })
            .collect();
        maxima.sort_by(f64::total_cmp);
        let expected = 0.5 * (maxima[49] + maxima[50]);
        let got = median_nn_coupling(&m).unwrap();
        assert!((got - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn from_dense_validates() {
        assert!(CouplingMatrix::from_dense(2, vec![0.0, 1.0, 1.0, 0.0]).is_ok());
        assert!(CouplingMatrix::from_dense(2, vec![0.0, 1.0, 2.0, 0.0]).is_err());
        assert!(CouplingMatrix::from_dense(2, vec![1.0, 1.0, 1.0, 0.0]).is_err());
        assert!(CouplingMatrix::from_dense(2, vec![0.0, 1.0, 1.0]).is_err());
    }
}
