//! The two-weight scalar example: `f(x) = w1 w2 x`, trained on
//! `{(1, 2), (2, 4)}` and poisoned by shifting the inputs by `0.2 · (−1, −2)`.
//!
//! As a DFCNN this is depth 2, width 1, input dimension 1 and read-out `a = 1`.
//! All inputs and weights used here are positive, so the ReLUs are inactive as
//! nonlinearities.

use nalgebra::{DMatrix, DVector};

use crate::net::{Dataset, Network};
use crate::sensitivity::PerturbationSpec;

/// Published modulus for this example, kept for side-by-side reporting.
pub const PUBLISHED_KAPPA: f64 = 0.2;
/// Published ball radius `κ ‖x − x^p‖` for this example.
pub const PUBLISHED_RADIUS: f64 = 0.178;
/// Published loss of the original weights on the poisoned data.
pub const PUBLISHED_LOSS_BEFORE: f64 = 0.4;
/// Published loss at the estimated solutions ("around 0.01").
pub const PUBLISHED_LOSS_AFTER: f64 = 0.01;

/// Per-point input shifts of the poisoning.
pub const SHIFTS: [f64; 2] = [-0.2, -0.4];

pub fn network(w1: f64, w2: f64) -> Network {
    Network::new(
        vec![DMatrix::from_element(1, 1, w1), DMatrix::from_element(1, 1, w2)],
        DVector::from_element(1, 1.0),
    )
    .expect("toy shape is valid")
}

/// The solution `w̄ = (1, 2)`.
pub fn solution() -> Network {
    network(1.0, 2.0)
}

pub fn pristine_data() -> Dataset {
    Dataset::from_scalars(&[(1.0, 2.0), (2.0, 4.0)]).expect("toy data is valid")
}

pub fn poisoned_data() -> Dataset {
    pristine_data()
        .shifted(&[
            (0, DVector::from_element(1, SHIFTS[0])),
            (1, DVector::from_element(1, SHIFTS[1])),
        ])
        .expect("toy shift is valid")
}

/// Both points perturbed, `x^p = x̄ + 0.2 · (−1, −2)`.
pub fn poisoning_spec() -> PerturbationSpec {
    PerturbationSpec::from_displacements(
        vec![0, 1],
        vec![DVector::from_element(1, SHIFTS[0]), DVector::from_element(1, SHIFTS[1])],
    )
    .expect("toy spec is valid")
}

/// Points on the hyperbola `w1 w2 = c` with `w1 ∈ [lo, hi]`.
pub fn hyperbola_samples(c: f64, lo: f64, hi: f64, count: usize) -> Vec<DVector<f64>> {
    (0..count)
        .map(|i| {
            let t = if count == 1 {
                0.0
            } else {
                i as f64 / (count - 1) as f64
            };
            let w1 = lo + t * (hi - lo);
            DVector::from_row_slice(&[w1, c / w1])
        })
        .collect()
}
