use qbm_gauss::channel::{BathSpec, Channel, DiffusionForm};
use qbm_gauss::fock::{
    build_fock, evolve_fock, evolve_fock_with, fock_fidelity, fock_log_negativity, fock_quasi_entropy,
    max_oracle_change, validate_against_gaussian, FockDensityMatrix, ValidationGrid,
};
use qbm_gauss::metrics::{fidelity, log_negativity};
use qbm_gauss::states::{make_state, StateSpec};
use qbm_gauss::Error;

#[test]
fn moments_track_gaussian_evolution() {
    let bath = BathSpec::new(0.2, 50.0, 7.0, 1.0).unwrap();
    let channel = Channel::new(bath).unwrap().with_form(DiffusionForm::Exact);
    let spec = StateSpec::squeezed(0.5);
    let grid: Vec<f64> = (0..=20).map(|k| 0.5 * k as f64).collect();
    let traj = evolve_fock_with(&build_fock(&spec, 40).unwrap(), &grid, &channel).unwrap();
    let gauss = make_state(&spec).unwrap();
    for (t, rho) in grid.iter().zip(&traj) {
        let cm = channel.evolve(&gauss, *t, 0).unwrap().state.into_cm();
        assert!((rho.covariance() - &cm).amax() < 1e-5, "t = {t}");
        assert!((rho.trace() - 1.0).abs() < 1e-8);
        assert!(rho.hermiticity_error() < 1e-12);
    }
}

#[test]
fn two_mode_moments_track_gaussian_evolution() {
    let bath = BathSpec::new(0.1, 10.0, 7.0, 1.0).unwrap();
    let channel = Channel::new(bath).unwrap().with_form(DiffusionForm::Exact);
    let spec = StateSpec::two_mode_squeezed(0.5);
    let grid = [0.0, 1.0, 3.0];
    let traj = evolve_fock_with(&build_fock(&spec, 30).unwrap(), &grid, &channel).unwrap();
    let gauss = make_state(&spec).unwrap();
    for (t, rho) in grid.iter().zip(&traj) {
        let cm = channel.evolve(&gauss, *t, 0).unwrap().state.into_cm();
        assert!((rho.covariance() - &cm).amax() < 1e-5, "t = {t}");
    }
}

#[test]
fn evolve_fock_validates_the_bath() {
    let bath = BathSpec::new(0.1, 50.0, 7.0, 1.0).unwrap();
    let rho = build_fock(&StateSpec::vacuum(), 10).unwrap();
    let traj = evolve_fock(&rho, &[0.0, 0.5], &bath).unwrap();
    assert_eq!(traj.len(), 2);
    assert!(evolve_fock(&rho, &[0.5, 1.0], &bath).is_err());
    assert!(evolve_fock(&rho, &[0.0, 1.0, 1.0], &bath).is_err());
}

#[test]
fn spec_examples() {
    let a = build_fock(&StateSpec::squeezed(0.5), 40).unwrap();
    let b = build_fock(&StateSpec::squeezed(0.8), 40).unwrap();
    assert!((fock_fidelity(&a, &b).unwrap() - 1.0 / 0.3f64.cosh()).abs() < 1e-7);
    let t1 = build_fock(&StateSpec::thermal(1.0), 60).unwrap();
    let t2 = build_fock(&StateSpec::thermal(2.0), 60).unwrap();
    assert!((fock_quasi_entropy(&t1, &t2, 2.0).unwrap() - 1.2).abs() < 1e-8);
}

#[test]
fn pure_reference_state_is_rejected_by_quasi_entropy() {
    let a = build_fock(&StateSpec::squeezed(0.3), 30).unwrap();
    let b = build_fock(&StateSpec::squeezed(0.5), 30).unwrap();
    assert!(matches!(fock_quasi_entropy(&a, &b, 2.0), Err(Error::Numerical(_))));
    assert!(fock_quasi_entropy(&a, &b, 1.0).is_err());
}

#[test]
fn initial_values_match_gaussian_formulas() {
    for r in [0.3, 0.5, 0.8] {
        let a = build_fock(&StateSpec::two_mode_squeezed(r - 0.2), 45).unwrap();
        let b = build_fock(&StateSpec::two_mode_squeezed(r), 45).unwrap();
        let ga = make_state(&StateSpec::two_mode_squeezed(r - 0.2)).unwrap();
        let gb = make_state(&StateSpec::two_mode_squeezed(r)).unwrap();
        assert!((fock_fidelity(&a, &b).unwrap() - fidelity(&ga, &gb).unwrap()).abs() < 1e-7);
        assert!((fock_log_negativity(&b, &[1]).unwrap() - log_negativity(&gb, &[1]).unwrap()).abs() < 1e-6);
        assert!((fock_log_negativity(&b, &[0]).unwrap() - 2.0 * r).abs() < 1e-6);
    }
}

#[test]
fn tensor_product_of_thermal_states_is_separable() {
    let a = build_fock(&StateSpec::thermal(0.5), 40).unwrap();
    let b = build_fock(&StateSpec::thermal(1.5), 40).unwrap();
    let ab = FockDensityMatrix::tensor(&a, &b).unwrap();
    assert!((ab.trace() - a.trace() * b.trace()).abs() < 1e-14);
    assert!(fock_log_negativity(&ab, &[1]).unwrap() < 1e-12);
    assert!((ab.mean_photons(1) - b.mean_photons(0)).abs() < 1e-12);
}

#[test]
fn validation_grid_agreement_and_cutoff_convergence() {
    let grid = ValidationGrid::default();
    let base = validate_against_gaussian(&grid).unwrap();
    assert_eq!(base.len(), 3 * 2 * 2 * 5);
    let mut compared = 0;
    for p in &base {
        assert!(p.fidelity_gap() <= 1e-4, "{p:?}");
        assert!(p.negativity_gap() <= 1e-4, "{p:?}");
        if let Some(gap) = p.petz_renyi_gap() {
            assert!(gap <= 1e-3, "{p:?}");
            compared += 1;
        }
    }
    assert!(compared > 0);
    let doubled = validate_against_gaussian(&grid.doubled()).unwrap();
    assert!(max_oracle_change(&base, &doubled) < 1e-6);
}
