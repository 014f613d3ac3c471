//! Dense linear algebra for small instances: explicit Hessians, SVD-based
//! pseudo-inverses and direct solves. Used as reference routes next to the
//! matrix-free solvers, and by the influence-function special case.

use nalgebra::{DMatrix, DVector};

use crate::diff::HvpOperator;
use crate::error::{Error, Result};

/// Columns `H e_j`, symmetrised as `(H + Hᵀ)/2`.
pub fn dense_hessian(op: &HvpOperator<'_>) -> Result<DMatrix<f64>> {
    let p = op.dim();
    let mut h = DMatrix::zeros(p, p);
    for j in 0..p {
        let mut e = DVector::zeros(p);
        e[j] = 1.0;
        h.set_column(j, &op.hvp(&e)?);
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// Moore-Penrose pseudo-inverse, dropping singular values below
/// `rel_cutoff · σ_max`.
pub fn pseudo_inverse(a: &DMatrix<f64>, rel_cutoff: f64) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let cutoff = rel_cutoff * sigma_max;
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested Vᵀ");
    let inv = DVector::from_iterator(
        svd.singular_values.len(),
        svd.singular_values
            .iter()
            .map(|&s| if s > cutoff && s > 0.0 { 1.0 / s } else { 0.0 }),
    );
    vt.transpose() * DMatrix::from_diagonal(&inv) * u.transpose()
}

pub fn singular_values(a: &DMatrix<f64>) -> DVector<f64> {
    a.clone().svd(false, false).singular_values
}

/// `(σ_min, σ_max)`.
pub fn singular_value_range(a: &DMatrix<f64>) -> (f64, f64) {
    let s = singular_values(a);
    (s.min(), s.max())
}

/// Solve `A x = b` for square `A` by LU, rejecting `σ_min < min_sigma`.
pub fn solve_nonsingular(a: &DMatrix<f64>, b: &DVector<f64>, min_sigma: f64) -> Result<DVector<f64>> {
    if !a.is_square() || a.nrows() != b.len() {
        return Err(Error::invalid(format!(
            "cannot solve {}x{} system with rhs of length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    let (sigma_min, _) = singular_value_range(a);
    if !(sigma_min >= min_sigma) {
        return Err(Error::SingularHessian { sigma_min });
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or(Error::SingularHessian { sigma_min })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinv_of_rank_one() {
        let a = DMatrix::from_row_slice(2, 2, &[10.0, 5.0, 5.0, 2.5]);
        let p = pseudo_inverse(&a, 1e-12);
        // A = 12.5 u uᵀ with u = (2,1)/√5, so A† = u uᵀ / 12.5
        let expect = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 1.0]) / (5.0 * 12.5);
        assert!((p - expect).norm() < 1e-14);
    }

    #[test]
    fn singular_solve_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let r = solve_nonsingular(&a, &DVector::zeros(2), 1e-8);
        assert!(matches!(r, Err(Error::SingularHessian { .. })));
    }
}
