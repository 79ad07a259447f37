//! Dense conversions and a generalized symmetric eigensolver.
//!
//! Everything here is O(n^2) storage or worse and meant for small projected
//! systems (Rayleigh-Ritz blocks, reduced bases) and for cross-checking the
//! sparse paths in tests.

use nalgebra::DMatrix;

use crate::assembly::BlockOperator;
use crate::linalg::ScalarCsr;
use crate::{Error, Result};

pub fn scalar_to_dense(a: &ScalarCsr) -> DMatrix<f64> {
    let p = &a.pattern;
    let mut out = DMatrix::zeros(p.n, p.n);
    for i in 0..p.n {
        for k in p.row_ptr[i]..p.row_ptr[i + 1] {
            out[(i, p.col_idx[k])] = a.vals[k];
        }
    }
    out
}

/// Expands a block operator to its full 2N x 2N stacked real matrix.
pub fn block_to_dense(a: &BlockOperator) -> DMatrix<f64> {
    let p = &a.pattern;
    let n = p.n;
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for k in p.row_ptr[i]..p.row_ptr[i + 1] {
            let j = p.col_idx[k];
            out[(i, j)] = a.rr[k];
            out[(i, n + j)] = a.ir[k];
            out[(n + i, j)] = a.ri[k];
            out[(n + i, n + j)] = a.ii[k];
        }
    }
    out
}

/// Solves the generalized symmetric eigenproblem `A x = lambda M x` with M
/// symmetric positive definite. Returns all eigenvalues in ascending order and
/// the matching M-orthonormal eigenvectors as columns.
///
/// Reduction: `M = L L^T`, `B = L^{-1} A L^{-T}` symmetric, then a standard
/// symmetric eigensolve and the back-substitution `x = L^{-T} y`.
pub fn generalized_symmetric_eigs(
    a: &DMatrix<f64>,
    m: &DMatrix<f64>,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n);
    assert_eq!(m.nrows(), n);
    assert_eq!(m.ncols(), n);
    let chol = nalgebra::Cholesky::new(m.clone())
        .ok_or_else(|| Error::Eigen("mass matrix is not positive definite".into()))?;
    let l = chol.l();
    // B = L^{-1} A L^{-T}: forward-solve twice, using symmetry of A.
    let x = l
        .solve_lower_triangular(a)
        .ok_or_else(|| Error::Eigen("singular Cholesky factor".into()))?;
    let b = l
        .solve_lower_triangular(&x.transpose())
        .ok_or_else(|| Error::Eigen("singular Cholesky factor".into()))?;
    let b = 0.5 * (&b + b.transpose());
    let eig = b.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
    let mut values = Vec::with_capacity(n);
    let mut vectors = DMatrix::zeros(n, n);
    let lt = l.transpose();
    for (col, &idx) in order.iter().enumerate() {
        values.push(eig.eigenvalues[idx]);
        let y = eig.eigenvectors.column(idx).into_owned();
        let mut x = lt
            .solve_upper_triangular(&y)
            .ok_or_else(|| Error::Eigen("singular Cholesky factor".into()))?;
        // Deterministic sign: the largest-magnitude component is positive.
        let mut pivot = 0;
        for r in 0..n {
            if x[r].abs() > x[pivot].abs() {
                pivot = r;
            }
        }
        if x[pivot] < 0.0 {
            x.neg_mut();
        }
        vectors.set_column(col, &x);
        let _ = col;
    }
    Ok((values, vectors))
}
