//! Disorder averages over independent RSA realizations.
//!
//! Realization `i` draws its positions from stream `i` of the master seed.
//! Realizations are grouped in fixed blocks of [`BLOCK_SIZE`]; each block
//! is reduced sequentially and the blocks are merged in index order, so the
//! result does not depend on how many threads evaluated them.

use super::{evaluate_observables, CurveMeta, Observable, RelaxationCurve, TimeGrid};
use crate::couplings::{coupling_matrix, strongest_couplings, CouplingMatrix, CouplingModel};
use crate::ensemble::{default_max_attempts, disorder_parameter, sample_rsa_with, BallGeometry, RsaOptions, SpinConfiguration};
use crate::error::{invalid, Error, Result};
use crate::exec::Execution;
use crate::stats::{self, CompensatedSum};

pub const BLOCK_SIZE: usize = 16;

/// Time grid for an ensemble run.
#[derive(Debug, Clone, PartialEq)]
pub enum GridSpec {
    Physical(TimeGrid),
    /// Log-spaced in `J_NN * tau`, converted with the ensemble-median
    /// `J_NN` pooled over every spin of every realization.
    NnUnits { min: f64, max: f64, points: usize },
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::NnUnits { min: 1e-2, max: 1e2, points: 200 }
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleTask {
    pub geometry: BallGeometry,
    pub n_spins: usize,
    pub model: CouplingModel,
    pub observables: Vec<Observable>,
    pub grid: GridSpec,
    /// Rejection budget per realization; defaults to `1000 * N`.
    pub max_attempts: Option<usize>,
    pub retain_realizations: bool,
}

impl EnsembleTask {
    pub fn new(geometry: BallGeometry, n_spins: usize, model: CouplingModel, observables: Vec<Observable>) -> Self {
        Self {
            geometry,
            n_spins,
            model,
            observables,
            grid: GridSpec::default(),
            max_attempts: None,
            retain_realizations: false,
        }
    }

    fn rsa_options(&self) -> RsaOptions {
        RsaOptions {
            max_attempts: self.max_attempts.unwrap_or_else(|| default_max_attempts(self.n_spins)),
            ..RsaOptions::for_count(self.n_spins)
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleResult {
    /// One curve per requested observable, in request order.
    pub curves: Vec<RelaxationCurve>,
    pub grid: TimeGrid,
    /// Ensemble-median nearest-neighbor coupling (absent for `N = 1`).
    pub j_nn: Option<f64>,
    /// Per-realization curves `[realization][observable][time]` when retained.
    pub realizations: Option<Vec<Vec<Vec<f64>>>>,
}

impl EnsembleResult {
    pub fn curve(&self, observable: Observable) -> Option<&RelaxationCurve> {
        self.curves.iter().find(|c| c.observable == observable)
    }
}

/// Positions and couplings of realization `index`.
pub fn realization(task: &EnsembleTask, master_seed: u64, index: usize) -> Result<(SpinConfiguration, CouplingMatrix)> {
    let config = sample_rsa_with(task.n_spins, task.geometry, master_seed, index as u64, task.rsa_options())?;
    let matrix = coupling_matrix(&config, &task.model)?;
    Ok((config, matrix))
}

struct Block {
    sums: Vec<Vec<CompensatedSum>>,
    squares: Vec<Vec<CompensatedSum>>,
    kept: Vec<Vec<Vec<f64>>>,
}

pub fn ensemble_average(
    task: &EnsembleTask,
    n_samples: usize,
    master_seed: u64,
    exec: Execution,
) -> Result<EnsembleResult> {
    if n_samples == 0 {
        return Err(invalid("need at least one realization"));
    }
    if task.n_spins == 0 {
        return Err(Error::InsufficientSpins { required: 1, got: 0 });
    }
    if task.observables.is_empty() {
        return Err(invalid("no observables requested"));
    }
    let options = task.rsa_options();

    // pass 1: positions and the pooled J_NN
    let configs: Vec<SpinConfiguration> = exec.try_map(n_samples, |i| {
        sample_rsa_with(task.n_spins, task.geometry, master_seed, i as u64, options)
    })?;
    let j_nn = if task.n_spins >= 2 {
        let pooled: Vec<Vec<f64>> = exec.try_map(n_samples, |i| {
            coupling_matrix(&configs[i], &task.model).map(|m| strongest_couplings(&m))
        })?;
        let flat: Vec<f64> = pooled.into_iter().flatten().collect();
        stats::median(&flat)
    } else {
        None
    };
    let grid = match &task.grid {
        GridSpec::Physical(g) => g.clone(),
        GridSpec::NnUnits { min, max, points } => {
            let j = j_nn.ok_or_else(|| invalid("J_NN units need at least two spins"))?;
            TimeGrid::log_in_nn_units(*min, *max, *points, j)?
        }
    };

    // pass 2: curves, block-reduced
    let n_obs = task.observables.len();
    let n_t = grid.len();
    let n_blocks = n_samples.div_ceil(BLOCK_SIZE);
    let blocks: Vec<Block> = exec.try_map(n_blocks, |b| -> Result<Block> {
        let mut block = Block {
            sums: vec![vec![CompensatedSum::new(); n_t]; n_obs],
            squares: vec![vec![CompensatedSum::new(); n_t]; n_obs],
            kept: Vec::new(),
        };
        let end = ((b + 1) * BLOCK_SIZE).min(n_samples);
        for config in &configs[b * BLOCK_SIZE..end] {
            let matrix = coupling_matrix(config, &task.model)?;
            let values = evaluate_observables(&matrix, &grid, &task.observables, Execution::Sequential)?;
            for (o, row) in values.iter().enumerate() {
                for (t, &v) in row.iter().enumerate() {
                    block.sums[o][t].add(v);
                    block.squares[o][t].add(v * v);
                }
            }
            if task.retain_realizations {
                block.kept.push(values);
            }
        }
        Ok(block)
    })?;

    let mut sums = vec![vec![CompensatedSum::new(); n_t]; n_obs];
    let mut squares = vec![vec![CompensatedSum::new(); n_t]; n_obs];
    let mut kept = Vec::new();
    for block in blocks {
        for o in 0..n_obs {
            for t in 0..n_t {
                sums[o][t].merge(&block.sums[o][t]);
                squares[o][t].merge(&block.squares[o][t]);
            }
        }
        kept.extend(block.kept);
    }

    let ns = n_samples as f64;
    let x = disorder_parameter(&configs[0]).x;
    let meta = CurveMeta {
        n_spins: Some(task.n_spins),
        n_samples,
        d: Some(task.geometry.d()),
        alpha: Some(task.model.alpha()),
        x: Some(x),
        rb: Some(task.geometry.rb()),
        r0: Some(task.geometry.r0()),
        master_seed: Some(master_seed),
        j_nn,
        source: "ensemble".into(),
    };
    let curves = task
        .observables
        .iter()
        .enumerate()
        .map(|(o, &observable)| {
            let values: Vec<f64> = sums[o].iter().map(|s| s.value() / ns).collect();
            let stderr: Vec<f64> = if n_samples < 2 {
                vec![0.0; n_t]
            } else {
                values
                    .iter()
                    .zip(&squares[o])
                    .map(|(m, sq)| {
                        let var = ((sq.value() - ns * m * m) / (ns - 1.0)).max(0.0);
                        (var / ns).sqrt()
                    })
                    .collect()
            };
            RelaxationCurve { grid: grid.clone(), values, stderr, observable, meta: meta.clone() }
        })
        .collect();

    Ok(EnsembleResult {
        curves,
        grid,
        j_nn,
        realizations: task.retain_realizations.then_some(kept),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{magnetization_curve, purity_curve};

    fn task(n: usize, x: f64, points: usize) -> EnsembleTask {
        let g = BallGeometry::with_disorder(3, 1.0, n, x).unwrap();
        let mut t = EnsembleTask::new(
            g,
            n,
            CouplingModel::isotropic(6.0, 1.0).unwrap(),
            vec![Observable::Magnetization, Observable::Purity, Observable::Moment(2)],
        );
        t.grid = GridSpec::NnUnits { min: 1e-2, max: 1e2, points };
        t
    }

    #[test]
    fn one_sample_equals_single_realization() {
        let t = task(40, 0.005, 30);
        let r = ensemble_average(&t, 1, 17, Execution::Sequential).unwrap();
        let (_, m) = realization(&t, 17, 0).unwrap();
        let single = magnetization_curve(&m, &r.grid);
        assert_eq!(r.curves[0].values, single.values);
        assert_eq!(r.curves[1].values, purity_curve(&m, &r.grid).values);
        assert!(r.curves[0].stderr.iter().all(|e| *e == 0.0));
        assert_eq!(r.j_nn, Some(crate::couplings::median_nn_coupling(&m).unwrap()));
    }

    #[test]
    fn deterministic_across_runs_and_strategies() {
        let t = task(30, 0.01, 20);
        let a = ensemble_average(&t, 37, 5, Execution::Sequential).unwrap();
        let b = ensemble_average(&t, 37, 5, Execution::Parallel).unwrap();
        let c = ensemble_average(&t, 37, 5, Execution::Parallel).unwrap();
        for o in 0..3 {
            assert_eq!(a.curves[o].values, b.curves[o].values);
            assert_eq!(a.curves[o].stderr, b.curves[o].stderr);
            assert_eq!(b.curves[o].values, c.curves[o].values);
        }
        let other = ensemble_average(&t, 37, 6, Execution::Sequential).unwrap();
        assert_ne!(a.curves[0].values, other.curves[0].values);
    }

    #[test]
    fn mean_of_retained_realizations() {
        let mut t = task(20, 0.0, 15);
        t.retain_realizations = true;
        let r = ensemble_average(&t, 20, 3, Execution::Parallel).unwrap();
        let kept = r.realizations.as_ref().unwrap();
        assert_eq!(kept.len(), 20);
        for time in 0..15 {
            let direct: f64 = kept.iter().map(|k| k[0][time]).sum::<f64>() / 20.0;
            assert!((direct - r.curves[0].values[time]).abs() < 1e-15);
        }
    }

    #[test]
    fn packing_failure_propagates() {
        let g = BallGeometry::new(2, 1.0, 0.9).unwrap();
        let t = EnsembleTask::new(g, 40, CouplingModel::isotropic(6.0, 1.0).unwrap(), vec![Observable::Magnetization]);
        assert!(matches!(ensemble_average(&t, 3, 1, Execution::Sequential), Err(Error::PackingFailure { .. })));
    }

    #[test]
    fn ranges_and_jensen_hold() {
        let t = task(60, 0.001, 40);
        let r = ensemble_average(&t, 8, 1, Execution::Parallel).unwrap();
        assert!(r.curves.iter().all(|c| c.within_range(1e-12)));
        for (m, p) in r.curves[0].values.iter().zip(&r.curves[1].values) {
            assert!(*p >= 0.5 * (1.0 + 4.0 * m * m) - 1e-14);
        }
    }
}
