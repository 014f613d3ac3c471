//! Finite-difference and dense reference routes for the derivative and
//! least-squares machinery.
//!
//! Everything here only calls the forward pass, the loss, or dense linear
//! algebra, so it stays independent of the tangent propagation it checks
//! (the Hessian-vector oracle differences the analytic gradient, which is
//! itself checked against differences of the loss).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dense::{dense_hessian, pseudo_inverse};
use crate::diff::{grad_w_mean_loss, input_jacobian, layer_jacobian, mixed_jvp, mixed_matrix, HvpOperator};
use crate::error::{Error, Result};
use crate::net::{Dataset, Network};
use crate::sensitivity::{graphical_derivative, GraphicalDerivativeConfig, MixedScaling, PerturbationSpec};

/// Inputs closer than this to a ReLU kink are skipped by the FD checks.
pub const KINK_MARGIN: f64 = 1e-6;
/// Step of the data-direction forward difference.
pub const MIXED_FD_STEP: f64 = 1e-5;
/// Relative cutoff on singular values in the dense pseudo-inverse.
pub const PINV_CUTOFF: f64 = 1e-10;

/// Central-difference step for a coordinate of size `w`.
pub fn fd_step(w: f64) -> f64 {
    1e-5 * (1.0 + w.abs())
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, and 0 when both vanish.
pub fn relative_error(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    floored_error(a, b, 0.0)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)`; the floor keeps a vanishing gradient
/// from turning round-off into a large relative error.
pub fn floored_error(a: &DVector<f64>, b: &DVector<f64>, floor: f64) -> f64 {
    let scale = a.norm().max(b.norm()).max(floor);
    if scale == 0.0 {
        0.0
    } else {
        (a - b).norm() / scale
    }
}

/// Smallest `|pre-activation|` over the given points.
pub fn kink_distance(net: &Network, data: &Dataset, indices: &[usize]) -> Result<f64> {
    let mut m = f64::INFINITY;
    for &i in indices {
        let (x, _) = data.get(i)?;
        m = m.min(net.forward(x)?.min_abs_preactivation());
    }
    Ok(m)
}

pub fn fd_gradient(net: &Network, data: &Dataset, indices: &[usize]) -> Result<DVector<f64>> {
    let w = net.flatten();
    let mut g = DVector::zeros(w.len());
    for j in 0..w.len() {
        let h = fd_step(w[j]);
        let mut wp = w.clone();
        wp[j] += h;
        let mut wm = w.clone();
        wm[j] -= h;
        let lp = net.with_weights(&wp)?.mean_loss(data, indices)?;
        let lm = net.with_weights(&wm)?.mean_loss(data, indices)?;
        g[j] = (lp - lm) / (2.0 * h);
    }
    Ok(g)
}

pub fn fd_layer_jacobian(net: &Network, x: &DVector<f64>, h: usize) -> Result<DMatrix<f64>> {
    if h == 0 || h > net.depth() {
        return Err(Error::invalid(format!("layer {h} out of range")));
    }
    let base = net.layer(h).clone();
    let mut jac = DMatrix::zeros(base.nrows(), base.ncols());
    for r in 0..base.nrows() {
        for c in 0..base.ncols() {
            let step = fd_step(base[(r, c)]);
            let eval = |delta: f64| -> Result<f64> {
                let mut layers = net.layers().to_vec();
                layers[h - 1][(r, c)] += delta;
                Network::new(layers, net.output_vector().clone())?.predict(x)
            };
            jac[(r, c)] = (eval(step)? - eval(-step)?) / (2.0 * step);
        }
    }
    Ok(jac)
}

pub fn fd_input_jacobian(net: &Network, x: &DVector<f64>) -> Result<DVector<f64>> {
    let mut g = DVector::zeros(x.len());
    for j in 0..x.len() {
        let step = fd_step(x[j]);
        let mut xp = x.clone();
        xp[j] += step;
        let mut xm = x.clone();
        xm[j] -= step;
        g[j] = (net.predict(&xp)? - net.predict(&xm)?) / (2.0 * step);
    }
    Ok(g)
}

/// Central difference of the analytic gradient along `v`.
pub fn fd_hvp(net: &Network, data: &Dataset, indices: &[usize], v: &DVector<f64>) -> Result<DVector<f64>> {
    let vn = v.norm();
    if vn == 0.0 {
        return Ok(DVector::zeros(v.len()));
    }
    let w = net.flatten();
    let eps = 1e-5 * (1.0 + w.norm()) / vn;
    let gp = grad_w_mean_loss(&net.with_weights(&(&w + v * eps))?, data, indices)?.values;
    let gm = grad_w_mean_loss(&net.with_weights(&(&w - v * eps))?, data, indices)?.values;
    Ok((gp - gm) / (2.0 * eps))
}

/// `(∇_w L̄(x + ε Δx) − ∇_w L̄(x)) / ε` with `ε = 1e-5`, mean over `indices`.
pub fn fd_mixed_jvp(
    net: &Network,
    data: &Dataset,
    indices: &[usize],
    directions: &[DVector<f64>],
) -> Result<DVector<f64>> {
    let shifts: Vec<_> = indices
        .iter()
        .copied()
        .zip(directions.iter().map(|d| d * MIXED_FD_STEP))
        .collect();
    let moved = data.shifted(&shifts)?;
    let g1 = grad_w_mean_loss(net, &moved, indices)?.values;
    let g0 = grad_w_mean_loss(net, data, indices)?.values;
    Ok((g1 - g0) / MIXED_FD_STEP)
}

/// `−H† b` from a dense Hessian, a dense mixed matrix and an SVD.
pub fn dense_min_norm_oracle(
    net: &Network,
    data: &Dataset,
    spec: &PerturbationSpec,
    scaling: MixedScaling,
) -> Result<DVector<f64>> {
    let h = dense_hessian(&HvpOperator::full(net, data)?)?;
    let norm = match scaling {
        MixedScaling::Consistent => data.len() as f64,
        MixedScaling::PerSubset => spec.indices().len() as f64,
    };
    let mut b = DVector::zeros(net.param_count());
    for (&i, shift) in spec.indices().iter().zip(spec.displacements()) {
        b += mixed_matrix(net, data, i)? * shift;
    }
    b /= norm;
    Ok(-(pseudo_inverse(&h, PINV_CUTOFF) * b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub param_count: usize,
    pub kink_distance: f64,
    /// FD checks are skipped when the data sit within [`KINK_MARGIN`] of a kink.
    pub fd_checked: bool,
    pub gradient_rel_err: Option<f64>,
    pub layer_jacobian_rel_err: Option<f64>,
    pub input_jacobian_rel_err: Option<f64>,
    pub hvp_rel_err: Option<f64>,
    pub mixed_rel_err: Option<f64>,
    pub pinv_rel_err: Option<f64>,
    pub pinv_equivalent: Option<bool>,
    pub fd_pass: Option<bool>,
}

pub const FD_TOL: f64 = 1e-5;
pub const MIXED_FD_TOL: f64 = 1e-4;
pub const PINV_TOL: f64 = 1e-6;
/// Largest parameter count for the dense pseudo-inverse check.
pub const PINV_MAX_PARAMS: usize = 200;

/// Run every oracle that applies to `(net, data)`. The pseudo-inverse
/// comparison runs when `spec` is given, `p ≤ PINV_MAX_PARAMS` and `w̄` is
/// stationary.
pub fn run_oracle_suite(
    net: &Network,
    data: &Dataset,
    spec: Option<&PerturbationSpec>,
    seed: u64,
) -> Result<OracleReport> {
    let all = data.all_indices();
    let kink = kink_distance(net, data, &all)?;
    let p = net.param_count();
    let mut rep = OracleReport {
        param_count: p,
        kink_distance: kink,
        fd_checked: kink > KINK_MARGIN,
        gradient_rel_err: None,
        layer_jacobian_rel_err: None,
        input_jacobian_rel_err: None,
        hvp_rel_err: None,
        mixed_rel_err: None,
        pinv_rel_err: None,
        pinv_equivalent: None,
        fd_pass: None,
    };
    if rep.fd_checked {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = grad_w_mean_loss(net, data, &all)?.values;
        rep.gradient_rel_err = Some(floored_error(&g, &fd_gradient(net, data, &all)?, 1.0));

        let mut lj = 0.0f64;
        let mut ij = 0.0f64;
        for x in data.inputs() {
            for h in 1..=net.depth() {
                let a = layer_jacobian(net, x, h)?;
                let b = fd_layer_jacobian(net, x, h)?;
                let scale = a.norm().max(b.norm());
                if scale > 0.0 {
                    lj = lj.max((a - b).norm() / scale);
                }
            }
            ij = ij.max(relative_error(&input_jacobian(net, x)?, &fd_input_jacobian(net, x)?));
        }
        rep.layer_jacobian_rel_err = Some(lj);
        rep.input_jacobian_rel_err = Some(ij);

        let v = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
        let op = HvpOperator::full(net, data)?;
        rep.hvp_rel_err = Some(relative_error(&op.hvp(&v)?, &fd_hvp(net, data, &all, &v)?));

        let k = rng.random_range(0..data.len());
        let mut dir = DVector::from_fn(data.dim(), |_, _| rng.random_range(-1.0..1.0));
        dir /= dir.norm();
        let analytic = mixed_jvp(net, data, &[k], std::slice::from_ref(&dir))?;
        let fd = fd_mixed_jvp(net, data, &[k], &[dir])?;
        rep.mixed_rel_err = Some(relative_error(&analytic, &fd));

        rep.fd_pass = Some(
            [rep.gradient_rel_err, rep.layer_jacobian_rel_err, rep.input_jacobian_rel_err, rep.hvp_rel_err]
                .iter()
                .all(|e| e.unwrap() <= FD_TOL)
                && rep.mixed_rel_err.unwrap() <= MIXED_FD_TOL,
        );
    }
    if let Some(spec) = spec {
        if p <= PINV_MAX_PARAMS {
            let cfg = GraphicalDerivativeConfig {
                seed,
                ..Default::default()
            };
            match graphical_derivative(net, data, spec, &cfg) {
                Ok(gd) => {
                    let oracle = dense_min_norm_oracle(net, data, spec, cfg.scaling)?;
                    let err = relative_error(gd.min_norm(), &oracle);
                    rep.pinv_rel_err = Some(err);
                    rep.pinv_equivalent = Some(err <= PINV_TOL);
                }
                Err(Error::Precondition(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy;

    #[test]
    fn relative_error_edge_cases() {
        let z = DVector::zeros(3);
        assert_eq!(relative_error(&z, &z), 0.0);
        let a = DVector::from_row_slice(&[1.0, 0.0]);
        let b = DVector::from_row_slice(&[0.0, 1.0]);
        assert!((relative_error(&a, &b) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn toy_oracles_agree() {
        let spec = toy::poisoning_spec();
        let rep = run_oracle_suite(&toy::solution(), &toy::pristine_data(), Some(&spec), 0).unwrap();
        assert!(rep.fd_checked);
        assert_eq!(rep.fd_pass, Some(true));
        assert_eq!(rep.pinv_equivalent, Some(true));
    }

    #[test]
    fn toy_dense_oracle_by_hand() {
        let v = dense_min_norm_oracle(&toy::solution(), &toy::pristine_data(), &toy::poisoning_spec(), MixedScaling::Consistent).unwrap();
        assert!((v - DVector::from_row_slice(&[0.16, 0.08])).norm() < 1e-12);
    }
}
