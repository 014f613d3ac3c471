//! Matrix-free least squares.
//!
//! [`cgls`] runs conjugate gradients on the normal equations `AᵀA x = Aᵀ b`
//! without forming `AᵀA`. Started from `x0 = 0` the iterates stay in the range
//! of `Aᵀ`, so the limit is the minimum-norm least-squares solution `A† b`.
//! From any other start the limit is `A† b + P_null(A) x0`.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// A linear map known only through its action on vectors.
pub trait LinearOperator {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    fn apply(&self, x: &DVector<f64>) -> DVector<f64>;
    fn apply_transpose(&self, y: &DVector<f64>) -> DVector<f64>;
}

impl LinearOperator for nalgebra::DMatrix<f64> {
    fn nrows(&self) -> usize {
        self.nrows()
    }

    fn ncols(&self) -> usize {
        self.ncols()
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self * x
    }

    fn apply_transpose(&self, y: &DVector<f64>) -> DVector<f64> {
        self.tr_mul(y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CglsConfig {
    /// Stop once `‖A x − b‖` drops by this factor relative to the larger of its
    /// value at `x = 0` and at the start point.
    pub rel_tol: f64,
    /// Stop once `‖Aᵀr‖ ≤ ls_tol ‖A‖ ‖r‖`, a least-squares optimum of an
    /// inconsistent system.
    pub ls_tol: f64,
    pub max_iter: usize,
}

impl CglsConfig {
    /// Default tolerance with the iteration cap `50 √n`.
    pub fn for_dim(n: usize) -> Self {
        CglsConfig {
            rel_tol: 1e-10,
            ls_tol: LS_TOL,
            max_iter: default_max_iter(n),
        }
    }
}

/// Default for [`CglsConfig::ls_tol`]. In double precision `‖Aᵀr‖ / (‖A‖ ‖r‖)`
/// bottoms out near `1e-7` on ill-conditioned operators.
pub const LS_TOL: f64 = 1e-6;

pub fn default_max_iter(n: usize) -> usize {
    ((50.0 * (n as f64).sqrt()).ceil() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CglsOutcome {
    pub solution: DVector<f64>,
    /// `‖A x − b‖`, recomputed from scratch at exit.
    pub residual: f64,
    /// `‖Aᵀ(A x − b)‖` at exit.
    pub normal_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimise `½‖A x − b‖²` starting from `x0`.
pub fn cgls<A: LinearOperator + ?Sized>(
    a: &A,
    b: &DVector<f64>,
    x0: &DVector<f64>,
    cfg: CglsConfig,
) -> Result<CglsOutcome> {
    if b.len() != a.nrows() || x0.len() != a.ncols() {
        return Err(Error::invalid(format!(
            "operator is {}x{}, got rhs {} and start {}",
            a.nrows(),
            a.ncols(),
            b.len(),
            x0.len()
        )));
    }
    let b_norm = b.norm();
    let atb_norm = a.apply_transpose(b).norm();
    let mut x = x0.clone();
    let mut r = b - a.apply(&x);
    let mut s = a.apply_transpose(&r);
    let mut p = s.clone();
    let mut gamma = s.norm_squared();

    let r_ref = b_norm.max(r.norm());
    // running lower bound on ‖A‖
    let mut a_norm = if b_norm > 0.0 { atb_norm / b_norm } else { 0.0 };
    let done = |r: &DVector<f64>, s: &DVector<f64>, a_norm: f64| {
        let rn = r.norm();
        rn <= cfg.rel_tol * r_ref || s.norm() <= cfg.ls_tol * a_norm * rn
    };

    let mut iterations = 0;
    let mut converged = done(&r, &s, a_norm);
    while !converged && iterations < cfg.max_iter {
        let q = a.apply(&p);
        let qq = q.norm_squared();
        if qq == 0.0 || !qq.is_finite() {
            break;
        }
        a_norm = a_norm.max((qq / p.norm_squared()).sqrt());
        let alpha = gamma / qq;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &q, 1.0);
        s = a.apply_transpose(&r);
        let gamma_next = s.norm_squared();
        iterations += 1;
        converged = done(&r, &s, a_norm);
        let beta = gamma_next / gamma;
        gamma = gamma_next;
        p = &s + &p * beta;
    }

    let r = b - a.apply(&x);
    let normal_residual = a.apply_transpose(&r).norm();
    Ok(CglsOutcome {
        residual: r.norm(),
        normal_residual,
        solution: x,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::pseudo_inverse;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn solves_spd_system() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = DVector::from_row_slice(&[1.0, 2.0]);
        let out = cgls(&a, &b, &DVector::zeros(2), CglsConfig::for_dim(2)).unwrap();
        assert!(out.converged);
        // exact: (1/11, 7/11)
        assert!((out.solution - DVector::from_row_slice(&[1.0 / 11.0, 7.0 / 11.0])).norm() < 1e-12);
    }

    #[test]
    fn zero_start_gives_minimum_norm_on_singular_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = DMatrix::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));
        let a = &u * u.transpose();
        let b = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
        let out = cgls(&a, &b, &DVector::zeros(6), CglsConfig::for_dim(6)).unwrap();
        let oracle = pseudo_inverse(&a, 1e-10) * &b;
        assert!((&out.solution - &oracle).norm() <= 1e-8 * oracle.norm());
    }

    #[test]
    fn random_start_adds_null_space_component() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let b = DVector::from_row_slice(&[3.0, 0.0]);
        let x0 = DVector::from_row_slice(&[0.5, -2.0]);
        let out = cgls(&a, &b, &x0, CglsConfig::for_dim(2)).unwrap();
        assert!((out.solution - DVector::from_row_slice(&[3.0, -2.0])).norm() < 1e-14);
    }

    #[test]
    fn inconsistent_system_stops_on_normal_residual() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let b = DVector::from_row_slice(&[1.0, 1.0]);
        let out = cgls(&a, &b, &DVector::zeros(2), CglsConfig::for_dim(2)).unwrap();
        assert!(out.converged);
        assert!((out.residual - 1.0).abs() < 1e-14);
        assert!(out.normal_residual < 1e-14);
    }

    #[test]
    fn zero_rhs_returns_start() {
        let a = DMatrix::<f64>::identity(3, 3);
        let out = cgls(&a, &DVector::zeros(3), &DVector::zeros(3), CglsConfig::for_dim(3)).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.solution.norm(), 0.0);
    }

    #[test]
    fn shape_mismatch() {
        let a = DMatrix::<f64>::identity(3, 3);
        assert!(cgls(&a, &DVector::zeros(2), &DVector::zeros(3), CglsConfig::for_dim(3)).is_err());
    }
}
