use rand::Rng;

use setsens::scenarios::{gaussian_inputs, random_spec, seeded_rng, zero_loss_instance};
use setsens::verify::{run_oracle_suite, FD_TOL, MIXED_FD_TOL, PINV_TOL};
use setsens::{Dataset, Network, Shape};

fn random_shape<R: Rng>(rng: &mut R) -> Shape {
    Shape::new(rng.random_range(1..=3), rng.random_range(2..=6), rng.random_range(1..=4)).unwrap()
}

#[test]
fn finite_differences_agree_on_random_instances() {
    let mut checked = 0;
    for seed in 0..40u64 {
        let mut rng = seeded_rng(seed, 11);
        let shape = random_shape(&mut rng);
        let n = rng.random_range(2..=6);
        let net = Network::random(shape, &mut rng);
        let inputs = gaussian_inputs(n, shape.input_dim, &mut rng);
        let labels = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let data = Dataset::new(inputs, labels).unwrap();
        let rep = run_oracle_suite(&net, &data, None, seed).unwrap();
        if !rep.fd_checked {
            continue;
        }
        checked += 1;
        for (name, err, tol) in [
            ("gradient", rep.gradient_rel_err, FD_TOL),
            ("layer jacobian", rep.layer_jacobian_rel_err, FD_TOL),
            ("input jacobian", rep.input_jacobian_rel_err, FD_TOL),
            ("hvp", rep.hvp_rel_err, FD_TOL),
            ("mixed", rep.mixed_rel_err, MIXED_FD_TOL),
        ] {
            let err = err.unwrap();
            assert!(err <= tol, "seed {seed}: {name} relative error {err:e}");
        }
    }
    assert!(checked >= 20, "only {checked} instances away from kinks");
}

#[test]
fn minimum_norm_matches_pseudo_inverse_at_zero_loss() {
    for seed in 0..24u64 {
        let mut rng = seeded_rng(seed, 12);
        let shape = random_shape(&mut rng);
        let n = rng.random_range(1..=8);
        let (net, data) = zero_loss_instance(shape, n, seed).unwrap();
        if net.param_count() > 200 {
            continue;
        }
        let spec = random_spec(&data, rng.random_range(1..=n), 0.05, &mut rng).unwrap();
        let rep = run_oracle_suite(&net, &data, Some(&spec), seed).unwrap();
        let err = rep.pinv_rel_err.unwrap();
        assert!(err <= PINV_TOL, "seed {seed}: {err:e}");
        assert_eq!(rep.pinv_equivalent, Some(true));
    }
}
