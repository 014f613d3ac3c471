//! Set-valued sensitivity analysis for deep fully-connected ReLU networks.
//!
//! The solution map `S(x) = { w : ∇_w (1/n) Σ L(x_i, y_i, w) = 0 }` sends
//! training data to the set of stationary weights. This crate computes
//!
//! - exact gradients, layer Jacobians, Hessian-vector products and mixed
//!   data/weight products for the quadratic loss ([`diff`]),
//! - the graphical derivative of `S`, the estimated post-perturbation solution
//!   set and its coderivative ([`sensitivity`]),
//! - per-layer Lipschitz-like moduli and an empirical check of the set
//!   inclusion by retraining ([`lipschitz`]),
//! - Pompeiu-Hausdorff distances between finite solution-set samples
//!   ([`set_metrics`]),
//!
//! plus the supporting trainer, landscape slices, file formats and
//! finite-difference oracles.

pub mod dense;
pub mod diff;
pub mod error;
pub mod io;
pub mod landscape;
pub mod lipschitz;
pub mod net;
pub mod scenarios;
pub mod sensitivity;
pub mod set_metrics;
pub mod solver;
pub mod toy;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use net::{ActivationPattern, Dataset, ForwardPass, Network, Shape};
pub use sensitivity::{
    algorithm1, coderivative_apply, estimate_solution_set, graphical_derivative, influence_function,
    GraphicalDerivativeConfig, MixedScaling, PerturbationSpec, SensitivityReport,
};
pub use set_metrics::SolutionSet;
