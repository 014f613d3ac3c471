use nalgebra::DVector;
use proptest::prelude::*;

use setsens::dense::{dense_hessian, pseudo_inverse};
use setsens::diff::HvpOperator;
use setsens::io::{read_json, write_json};
use setsens::scenarios::{
    least_squares_instance, random_spec, seeded_rng, sign_gradient_spec, trained_instance, zero_loss_instance,
};
use setsens::sensitivity::{data_jacobian_of_stationarity, CoderivativeArg};
use setsens::set_metrics::excess;
use setsens::trainer::TrainConfig;
use setsens::{
    algorithm1, coderivative_apply, estimate_solution_set, graphical_derivative, toy, GraphicalDerivativeConfig,
    PerturbationSpec, SensitivityReport, Shape, SolutionSet,
};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn every_sample_meets_the_residual_bound(
        depth in 1usize..=3,
        width in 1usize..=5,
        dim in 1usize..=4,
        n in 1usize..=6,
        seed in 0u64..1000,
        delta in 0.0f64..0.5,
    ) {
        let (net, data) = zero_loss_instance(Shape::new(depth, width, dim).unwrap(), n, seed).unwrap();
        let mut rng = seeded_rng(seed, 5);
        let k = 1 + (seed as usize) % n;
        let spec = random_spec(&data, k, delta, &mut rng).unwrap();
        let cfg = GraphicalDerivativeConfig { samples: 3, seed, ..Default::default() };
        let gd = graphical_derivative(&net, &data, &spec, &cfg).unwrap();
        let bound = gd.residual_bound();
        for s in &gd.samples {
            prop_assert!(s.residual <= bound, "residual {} > {}", s.residual, bound);
            prop_assert!(s.within_bound);
        }
        prop_assert!(!gd.warning);
    }
}

#[test]
fn minimum_norm_sample_is_linear_in_delta() {
    let (net, data) = zero_loss_instance(Shape::new(2, 4, 3).unwrap(), 5, 3).unwrap();
    let mut rng = seeded_rng(3, 0);
    let base = random_spec(&data, 2, 1.0, &mut rng).unwrap();
    let cfg = GraphicalDerivativeConfig::default();
    let v1 = graphical_derivative(&net, &data, &base.scaled(1e-4).unwrap(), &cfg).unwrap();
    let v2 = graphical_derivative(&net, &data, &base.scaled(2e-4).unwrap(), &cfg).unwrap();
    let ratio = v2.min_norm().norm() / v1.min_norm().norm();
    assert!((ratio - 2.0).abs() <= 1e-3, "ratio {ratio}");
    assert!((v2.min_norm() - v1.min_norm() * 2.0).norm() <= 1e-6 * v2.min_norm().norm());
}

#[test]
fn coderivative_matches_dense_adjoint_on_nonsingular_instance() {
    let inst = least_squares_instance(5, 20, 4).unwrap();
    let (net, data) = (&inst.network, &inst.data);
    let h = dense_hessian(&HvpOperator::full(net, data).unwrap()).unwrap();
    let m = data_jacobian_of_stationarity(net, data, 2).unwrap();
    let target = DVector::from_row_slice(&[0.3, -0.1, 0.7, 0.2, -0.5]);
    let y = -h.clone().lu().solve(&target).unwrap();
    let expected = m.tr_mul(&y);
    let cfg = GraphicalDerivativeConfig {
        samples: 3,
        ..Default::default()
    };
    let res = coderivative_apply(net, data, 2, &CoderivativeArg::Full(target), &cfg).unwrap();
    assert!(res.consistent);
    for q in &res.elements {
        // H nonsingular: every sample is the same unique element
        assert!((q - &expected).norm() <= 1e-6 * expected.norm());
    }
    let zero = coderivative_apply(net, data, 2, &CoderivativeArg::Full(DVector::zeros(5)), &cfg).unwrap();
    // D*F(0) = {0}: exact for the minimum-norm adjoint, to solver tolerance from random starts
    assert_eq!(zero.elements[0].norm(), 0.0);
    assert!(zero.elements.iter().all(|q| q.norm() <= 1e-8));
}

#[test]
fn coderivative_matches_pseudo_inverse_on_singular_instance() {
    let (net, data) = zero_loss_instance(Shape::new(2, 3, 2).unwrap(), 3, 8).unwrap();
    let h = dense_hessian(&HvpOperator::full(&net, &data).unwrap()).unwrap();
    // an argument in the range of H keeps the adjoint system consistent
    let target = &h * DVector::from_fn(net.param_count(), |i, _| (i as f64 * 0.37).sin());
    let y = -pseudo_inverse(&h, 1e-10) * &target;
    let expected = data_jacobian_of_stationarity(&net, &data, 0).unwrap().tr_mul(&y);
    let res = coderivative_apply(&net, &data, 0, &CoderivativeArg::Full(target), &GraphicalDerivativeConfig::default()).unwrap();
    assert!(res.consistent);
    assert!((&res.elements[0] - &expected).norm() <= 1e-6 * expected.norm().max(1e-12));
}

#[test]
fn estimates_improve_perturbed_loss_at_small_steps() {
    let cfg = TrainConfig {
        learning_rate: 0.2,
        max_epochs: 200_000,
        tolerance: 1e-9,
        seed: 5,
        ..TrainConfig::default()
    };
    let inst = trained_instance(Shape::new(2, 8, 4).unwrap(), 20, &cfg).unwrap();
    for (k, indices) in [vec![3], vec![0, 7, 11]].into_iter().enumerate() {
        let spec = sign_gradient_spec(&inst.network, &inst.data, &indices, 0.002).unwrap();
        let gd_cfg = GraphicalDerivativeConfig {
            samples: 4,
            seed: k as u64,
            ..Default::default()
        };
        let rep = algorithm1(&inst.network, &inst.data, &spec, &gd_cfg).unwrap();
        for s in &rep.per_sample {
            assert!(s.loss_after <= s.loss_before, "{} > {}", s.loss_after, s.loss_before);
        }
    }
}

#[test]
fn toy_estimates_sit_close_to_the_poisoned_solution_set() {
    let cfg = GraphicalDerivativeConfig {
        samples: 6,
        seed: 1,
        ..Default::default()
    };
    let gd = graphical_derivative(&toy::solution(), &toy::pristine_data(), &toy::poisoning_spec(), &cfg).unwrap();
    let est = estimate_solution_set(&toy::solution().flatten(), &gd).unwrap();
    // retrained solutions on the poisoned data satisfy w1 w2 = 2.5
    let poisoned = SolutionSet::new(toy::hyperbola_samples(2.5, 0.8, 1.6, 4001), "poisoned").unwrap();
    let original = SolutionSet::new(toy::hyperbola_samples(2.0, 0.8, 1.6, 4001), "original").unwrap();
    let e_new = excess(&est, &poisoned).unwrap();
    let e_old = excess(&est, &original).unwrap();
    assert!(e_new < 0.05, "excess {e_new}");
    assert!(e_new < e_old);
}

#[test]
fn report_file_round_trip() {
    let spec = PerturbationSpec::from_displacements(vec![1], vec![DVector::from_element(1, -0.4)]).unwrap();
    let cfg = GraphicalDerivativeConfig {
        samples: 2,
        seed: 9,
        ..Default::default()
    };
    let rep = algorithm1(&toy::solution(), &toy::pristine_data(), &spec, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    write_json(&path, &rep).unwrap();
    let back: SensitivityReport = read_json(&path).unwrap();
    assert_eq!(back, rep);
    assert!((rep.hausdorff_to_wbar - rep.per_sample.iter().map(|s| s.norm).fold(0.0, f64::max)).abs() < 1e-15);
}
