use glassy_core::analytic::{analytic_magnetization, ModelParameters};
use glassy_core::couplings::{coupling_matrix, median_nn_coupling, Anisotropy, CouplingModel};
use glassy_core::dynamics::{
    ensemble_average, exact_oracle, magnetization_curve, moment_curve, purity_curve, realization, EnsembleTask,
    GridSpec, Observable, TimeGrid,
};
use glassy_core::ensemble::{default_max_attempts, sample_rsa, BallGeometry};
use glassy_core::fitting::fit_stretched_exponential;
use glassy_core::Execution;

#[test]
fn anisotropic_product_formula_matches_state_vector() {
    for (seed, anisotropy) in [(1u64, Anisotropy::Dipolar), (2, Anisotropy::Constant(-0.7))] {
        let g = BallGeometry::with_disorder(3, 1.0, 9, 0.05).unwrap();
        let c = sample_rsa(9, g, seed, default_max_attempts(9)).unwrap();
        let m = coupling_matrix(&c, &CouplingModel::new(3.0, 1.0, anisotropy).unwrap()).unwrap();
        let grid = TimeGrid::log_in_nn_units(1e-2, 1e2, 40, median_nn_coupling(&m).unwrap()).unwrap();
        let exact = exact_oracle(&m, &grid).unwrap();
        let mag = magnetization_curve(&m, &grid);
        let pur = purity_curve(&m, &grid);
        for k in 0..grid.len() {
            assert!((mag.values[k] - exact.magnetization.values[k]).abs() < 1e-12);
            assert!((pur.values[k] - exact.purity.values[k]).abs() < 1e-12);
        }
        // second moment and purity carry the same information
        let m2 = moment_curve(2, &m, &grid).unwrap();
        for (a, p) in m2.values.iter().zip(&pur.values) {
            assert!((0.5 * (1.0 + a) - p).abs() < 1e-15);
        }
    }
}

#[test]
fn ensemble_mean_is_the_mean_of_realizations() {
    let g = BallGeometry::with_disorder(2, 1.0, 25, 0.01).unwrap();
    let mut task = EnsembleTask::new(g, 25, CouplingModel::isotropic(4.0, 1.0).unwrap(), vec![Observable::Magnetization]);
    task.grid = GridSpec::NnUnits { min: 1e-2, max: 1e1, points: 30 };
    let r = ensemble_average(&task, 6, 11, Execution::Sequential).unwrap();
    let curves: Vec<Vec<f64>> = (0..6)
        .map(|k| {
            let (_, m) = realization(&task, 11, k).unwrap();
            magnetization_curve(&m, &r.grid).values
        })
        .collect();
    for t in 0..r.grid.len() {
        let mean = curves.iter().map(|c| c[t]).sum::<f64>() / 6.0;
        assert!((r.curves[0].values[t] - mean).abs() < 1e-15);
    }
}

#[test]
fn ensemble_fit_tracks_the_closed_form() {
    let n = 300;
    let g = BallGeometry::with_disorder(3, 1.0, n, 0.005).unwrap();
    let task = EnsembleTask::new(
        g,
        n,
        CouplingModel::isotropic(6.0, 1.0).unwrap(),
        vec![Observable::Magnetization, Observable::Purity],
    );
    let r = ensemble_average(&task, 60, 3, Execution::default()).unwrap();
    let fit = fit_stretched_exponential(r.curve(Observable::Magnetization).unwrap(), None).unwrap();
    // finite-size bias pulls beta a few percent below d / alpha
    assert!(fit.beta > 0.42 && fit.beta < 0.5, "beta {}", fit.beta);
    let params = ModelParameters::from_ball(3, 6.0, n, 1.0, 1.0).unwrap();
    let curve = r.curve(Observable::Magnetization).unwrap();
    let j = r.j_nn.unwrap();
    for (&t, v) in curve.grid.values().iter().zip(&curve.values) {
        if (0.1..=10.0).contains(&(t * j)) {
            assert!((v - analytic_magnetization(&params, t).unwrap()).abs() < 0.05 * 0.5);
        }
    }
}
