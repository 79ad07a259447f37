//! Sparse and banded linear algebra shared by the solvers.
//!
//! The structured meshes give every assembled operator a fixed small bandwidth
//! (node indices of a triangle differ by at most `n + 2`), so direct solves use
//! banded factorizations: a complex Hermitian Cholesky for the gradient-flow and
//! stabilized-form systems, and a real symmetric LDL^T (with a tiny-pivot guard)
//! for Hessian, Newton, and eigenvalue systems. Preconditioned CG with a stale
//! Cholesky factor accelerates sequences of nearby flow systems. Everything here
//! is deterministic: no pivot choices depend on runtime ordering.

use std::sync::Arc;

use num_complex::Complex64;

use crate::mesh::Mesh2D;
use crate::{Error, Result};

/// Shared symmetric sparsity pattern in compressed-sparse-row form.
#[derive(Debug, PartialEq, Eq)]
pub struct CsrPattern {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    /// Largest `|i - j|` over stored entries.
    pub bandwidth: usize,
}

impl CsrPattern {
    /// Node-adjacency pattern of a mesh: entry (i, j) present iff i and j share
    /// a triangle (diagonal included). Column indices ascend within each row.
    pub fn from_mesh(mesh: &Mesh2D) -> Arc<CsrPattern> {
        let n = mesh.num_nodes();
        let mut adj: Vec<Vec<usize>> = vec![Vec::with_capacity(8); n];
        for t in mesh.triangles() {
            for &a in t {
                for &b in t {
                    adj[a].push(b);
                }
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut bandwidth = 0;
        row_ptr.push(0);
        for (i, row) in adj.iter_mut().enumerate() {
            row.sort_unstable();
            row.dedup();
            for &j in row.iter() {
                bandwidth = bandwidth.max(i.abs_diff(j));
            }
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }
        Arc::new(CsrPattern { n, row_ptr, col_idx, bandwidth })
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// Storage slot of entry (i, j), if present.
    pub fn find(&self, i: usize, j: usize) -> Option<usize> {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi].binary_search(&j).ok().map(|k| lo + k)
    }

    pub fn row_cols(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }
}

/// Real square matrix on a shared [`CsrPattern`].
#[derive(Debug, Clone)]
pub struct ScalarCsr {
    pub pattern: Arc<CsrPattern>,
    pub vals: Vec<f64>,
}

impl ScalarCsr {
    pub fn zeros(pattern: &Arc<CsrPattern>) -> Self {
        ScalarCsr { pattern: Arc::clone(pattern), vals: vec![0.0; pattern.nnz()] }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let slot = self
            .pattern
            .find(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) outside the sparsity pattern"));
        self.vals[slot] += v;
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        let p = &self.pattern;
        for i in 0..p.n {
            let mut acc = 0.0;
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                acc += self.vals[k] * x[p.col_idx[k]];
            }
            y[i] = acc;
        }
    }

    /// y = A x for complex x (A acting as a complex-linear scalar operator).
    pub fn matvec_complex(&self, x: &[Complex64], y: &mut [Complex64]) {
        let p = &self.pattern;
        for i in 0..p.n {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                acc += self.vals[k] * x[p.col_idx[k]];
            }
            y[i] = acc;
        }
    }

    /// self += scale * other, entrywise on a matching pattern.
    pub fn axpy(&mut self, other: &ScalarCsr, scale: f64) {
        assert!(
            Arc::ptr_eq(&self.pattern, &other.pattern) || *self.pattern == *other.pattern,
            "pattern mismatch"
        );
        for (a, &b) in self.vals.iter_mut().zip(&other.vals) {
            *a += scale * b;
        }
    }

    /// Sum of all entries (used by partition-of-unity checks).
    pub fn sum(&self) -> f64 {
        self.vals.iter().sum()
    }
}

/// Complex matrix on a shared [`CsrPattern`].
#[derive(Debug, Clone)]
pub struct ComplexCsr {
    pub pattern: Arc<CsrPattern>,
    pub vals: Vec<Complex64>,
}

impl ComplexCsr {
    pub fn zeros(pattern: &Arc<CsrPattern>) -> Self {
        ComplexCsr {
            pattern: Arc::clone(pattern),
            vals: vec![Complex64::new(0.0, 0.0); pattern.nnz()],
        }
    }

    /// Builds `a + i b` from two real matrices on the same pattern.
    pub fn from_parts(a: &ScalarCsr, b: &ScalarCsr) -> Self {
        assert!(
            Arc::ptr_eq(&a.pattern, &b.pattern) || *a.pattern == *b.pattern,
            "parts must share one pattern"
        );
        let vals = a.vals.iter().zip(&b.vals).map(|(&re, &im)| Complex64::new(re, im)).collect();
        ComplexCsr { pattern: Arc::clone(&a.pattern), vals }
    }

    pub fn matvec(&self, x: &[Complex64], y: &mut [Complex64]) {
        let p = &self.pattern;
        for i in 0..p.n {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                acc += self.vals[k] * x[p.col_idx[k]];
            }
            y[i] = acc;
        }
    }
}

/// Banded complex Hermitian Cholesky factorization `A = L L^H`.
///
/// Column-major band storage: slot `j*(bw+1) + d` holds `L[j+d, j]`.
pub struct BandedCholC {
    n: usize,
    bw: usize,
    cols: Vec<Complex64>,
}

impl BandedCholC {
    /// Factors a Hermitian positive definite matrix given by its CSR form.
    /// Fails when a diagonal pivot is not strictly positive.
    pub fn factor(a: &ComplexCsr) -> Result<BandedCholC> {
        let n = a.pattern.n;
        let bw = a.pattern.bandwidth;
        let stride = bw + 1;
        let mut cols = vec![Complex64::new(0.0, 0.0); n * stride];
        for i in 0..n {
            for k in a.pattern.row_ptr[i]..a.pattern.row_ptr[i + 1] {
                let j = a.pattern.col_idx[k];
                if j <= i {
                    cols[j * stride + (i - j)] = a.vals[k];
                }
            }
        }
        for j in 0..n {
            let base = j * stride;
            let reach = bw.min(n - 1 - j);
            let pivot = cols[base].re;
            if !(pivot > 0.0) || !pivot.is_finite() {
                return Err(Error::Solver(format!(
                    "complex Cholesky pivot {pivot:e} at column {j} (matrix not positive definite)"
                )));
            }
            let l = pivot.sqrt();
            cols[base] = Complex64::new(l, 0.0);
            for d in 1..=reach {
                cols[base + d] /= l;
            }
            for k in 1..=reach {
                let target = (j + k) * stride;
                let (head, tail) = cols.split_at_mut(target);
                let ljk_conj = head[base + k].conj();
                if ljk_conj.norm_sqr() == 0.0 {
                    continue;
                }
                let src = &head[base + k..=base + reach];
                let dst = &mut tail[..=reach - k];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d -= s * ljk_conj;
                }
            }
        }
        Ok(BandedCholC { n, bw, cols })
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, x: &mut [Complex64]) {
        let stride = self.bw + 1;
        for j in 0..self.n {
            let base = j * stride;
            let reach = self.bw.min(self.n - 1 - j);
            let xj = x[j] / self.cols[base].re;
            x[j] = xj;
            for d in 1..=reach {
                x[j + d] -= self.cols[base + d] * xj;
            }
        }
        for j in (0..self.n).rev() {
            let base = j * stride;
            let reach = self.bw.min(self.n - 1 - j);
            let mut s = x[j];
            for d in 1..=reach {
                s -= self.cols[base + d].conj() * x[j + d];
            }
            x[j] = s / self.cols[base].re;
        }
    }

    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Banded real symmetric LDL^T factorization (no pivoting, tiny-pivot guard).
///
/// Near-singular symmetric systems (the gauge-singular Hessian) factor with a
/// guarded pivot: a pivot below `1e-14` times the running pivot scale is replaced
/// by that threshold with matching sign, LINPACK-style; the count is recorded.
pub struct BandedLdl {
    n: usize,
    bw: usize,
    cols: Vec<f64>,
    d: Vec<f64>,
    pub perturbed_pivots: usize,
    pub min_pivot: f64,
}

impl BandedLdl {
    /// Factors a symmetric matrix from interleaved band assembly.
    ///
    /// `load` is called once with a mutable band buffer to fill the lower
    /// triangle: slot `j*(bw+1) + d` must receive `A[j+d, j]`.
    pub fn factor_from_band(
        n: usize,
        bw: usize,
        load: impl FnOnce(&mut [f64]),
        require_spd: bool,
    ) -> Result<BandedLdl> {
        let stride = bw + 1;
        let mut cols = vec![0.0; n * stride];
        load(&mut cols);
        let mut d = vec![0.0; n];
        let mut perturbed = 0usize;
        let mut scale = 0.0_f64;
        let mut min_pivot = f64::INFINITY;
        for j in 0..n {
            let base = j * stride;
            let reach = bw.min(n - 1 - j);
            let mut dj = cols[base];
            if !dj.is_finite() {
                return Err(Error::Solver(format!("non-finite pivot at column {j}")));
            }
            scale = scale.max(dj.abs());
            min_pivot = min_pivot.min(dj);
            if require_spd && !(dj > 0.0) {
                return Err(Error::Solver(format!(
                    "pivot {dj:e} at column {j} (matrix not positive definite)"
                )));
            }
            let floor = 1e-14 * scale.max(f64::MIN_POSITIVE);
            if dj.abs() < floor {
                dj = if dj < 0.0 { -floor } else { floor };
                perturbed += 1;
            }
            d[j] = dj;
            for k in 1..=reach {
                let target = (j + k) * stride;
                let (head, tail) = cols.split_at_mut(target);
                let vk = head[base + k];
                if vk == 0.0 {
                    continue;
                }
                let f = vk / dj;
                let src = &head[base + k..=base + reach];
                let dst = &mut tail[..=reach - k];
                for (t, s) in dst.iter_mut().zip(src) {
                    *t -= f * s;
                }
            }
            for dd in 1..=reach {
                cols[base + dd] /= dj;
            }
        }
        Ok(BandedLdl { n, bw, cols, d, perturbed_pivots: perturbed, min_pivot })
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let stride = self.bw + 1;
        for j in 0..self.n {
            let base = j * stride;
            let reach = self.bw.min(self.n - 1 - j);
            let xj = x[j];
            if xj != 0.0 {
                for dd in 1..=reach {
                    x[j + dd] -= self.cols[base + dd] * xj;
                }
            }
        }
        for j in 0..self.n {
            x[j] /= self.d[j];
        }
        for j in (0..self.n).rev() {
            let base = j * stride;
            let reach = self.bw.min(self.n - 1 - j);
            let mut s = x[j];
            for dd in 1..=reach {
                s -= self.cols[base + dd] * x[j + dd];
            }
            x[j] = s;
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Solves the bordered system `[[A, g], [g^T, 0]] (delta; mu) = (rhs; 0)` given a
/// factorization of `A`, by the cancellation formula `delta = y1 - mu y2`,
/// `mu = g.y1 / g.y2` with `y1 = A^{-1} rhs`, `y2 = A^{-1} g`.
///
/// The formula tolerates a nearly singular `A` whose null direction is spanned by
/// `g`: the blowup in `y1` and `y2` cancels in `delta`. The cancellation costs a
/// few digits when `A` is nearly singular, so `refine` steps of iterative
/// refinement on the augmented system (using `apply` for exact `A`-products)
/// restore them.
pub fn solve_bordered(
    ldl: &BandedLdl,
    g: &[f64],
    rhs: &[f64],
    apply: impl Fn(&[f64]) -> Vec<f64>,
    refine: usize,
) -> Result<(Vec<f64>, f64)> {
    // Solves [[A, g], [g^T, 0]] (d; m) = (b; r2) through the factorization.
    let solve_once = |b: &[f64], r2: f64| -> Result<(Vec<f64>, f64)> {
        let y1 = ldl.solve(b);
        let y2 = ldl.solve(g);
        let gy1: f64 = g.iter().zip(&y1).map(|(a, b)| a * b).sum();
        let gy2: f64 = g.iter().zip(&y2).map(|(a, b)| a * b).sum();
        if gy2 == 0.0 || !gy2.is_finite() {
            return Err(Error::Solver(format!("bordered solve degenerate: g.y2 = {gy2:e}")));
        }
        let mu = (gy1 - r2) / gy2;
        let delta: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| a - mu * b).collect();
        Ok((delta, mu))
    };
    let (mut delta, mut mu) = solve_once(rhs, 0.0)?;
    for _ in 0..refine {
        let adelta = apply(&delta);
        let res: Vec<f64> = rhs
            .iter()
            .zip(&adelta)
            .zip(g)
            .map(|((&b, &av), &gv)| b - av - mu * gv)
            .collect();
        let gdelta: f64 = g.iter().zip(&delta).map(|(a, b)| a * b).sum();
        let (ddelta, dmu) = solve_once(&res, -gdelta)?;
        for (d, dd) in delta.iter_mut().zip(&ddelta) {
            *d += dd;
        }
        mu += dmu;
    }
    Ok((delta, mu))
}

/// Preconditioned conjugate gradients for Hermitian positive definite systems.
///
/// Returns the solution and the iteration count; fails after `maxit` iterations
/// without reaching `||r|| <= tol * ||b||` so the caller can refactor.
pub fn pcg_complex(
    a: &ComplexCsr,
    b: &[Complex64],
    x0: Option<&[Complex64]>,
    precond: &BandedCholC,
    tol: f64,
    maxit: usize,
) -> Result<(Vec<Complex64>, usize)> {
    let n = b.len();
    let bnorm = l2_norm_c(b);
    if bnorm == 0.0 {
        return Ok((vec![Complex64::new(0.0, 0.0); n], 0));
    }
    let mut x = match x0 {
        Some(x0) => x0.to_vec(),
        None => vec![Complex64::new(0.0, 0.0); n],
    };
    let mut r = vec![Complex64::new(0.0, 0.0); n];
    a.matvec(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z = precond.solve(&r);
    let mut p = z.clone();
    let mut rz = dot_c(&r, &z).re;
    let mut ap = vec![Complex64::new(0.0, 0.0); n];
    for it in 0..maxit {
        if l2_norm_c(&r) <= tol * bnorm {
            return Ok((x, it));
        }
        a.matvec(&p, &mut ap);
        let pap = dot_c(&p, &ap).re;
        if !(pap > 0.0) {
            return Err(Error::Solver(format!(
                "conjugate gradients broke down: p^H A p = {pap:e} at iteration {it}"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        z.copy_from_slice(&r);
        precond.solve_in_place(&mut z);
        let rz_new = dot_c(&r, &z).re;
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if l2_norm_c(&r) <= tol * bnorm {
        return Ok((x, maxit));
    }
    Err(Error::Solver(format!(
        "conjugate gradients did not converge in {maxit} iterations (rel. residual {:e})",
        l2_norm_c(&r) / bnorm
    )))
}

pub fn dot_c(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn l2_norm_c(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Stacked (re block then im block) to interleaved (re0, im0, re1, im1, ...).
pub fn stacked_to_interleaved(x: &[f64]) -> Vec<f64> {
    let n = x.len() / 2;
    let mut out = vec![0.0; 2 * n];
    for i in 0..n {
        out[2 * i] = x[i];
        out[2 * i + 1] = x[n + i];
    }
    out
}

pub fn interleaved_to_stacked(x: &[f64]) -> Vec<f64> {
    let n = x.len() / 2;
    let mut out = vec![0.0; 2 * n];
    for i in 0..n {
        out[i] = x[2 * i];
        out[n + i] = x[2 * i + 1];
    }
    out
}

/// Pattern-bandwidth helper for meshes (scalar operators).
pub fn mesh_bandwidth(mesh: &Mesh2D) -> usize {
    mesh.n() + 2
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn small_pattern(n_mesh: usize) -> Arc<CsrPattern> {
        let mesh = Mesh2D::build_uniform(n_mesh).unwrap();
        CsrPattern::from_mesh(&mesh)
    }

    /// Deterministic low-quality randomness, plenty for test matrices.
    struct XorShift(u64);
    impl XorShift {
        fn next_f64(&mut self) -> f64 {
            self.0 ^= self.0 << 13;
            self.0 ^= self.0 >> 7;
            self.0 ^= self.0 << 17;
            (self.0 >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        }
    }

    #[test]
    fn pattern_matches_mesh_adjacency() {
        let mesh = Mesh2D::build_uniform(3).unwrap();
        let p = CsrPattern::from_mesh(&mesh);
        assert_eq!(p.n, mesh.num_nodes());
        assert_eq!(p.bandwidth, mesh.n() + 2);
        // Symmetry and diagonal presence.
        for i in 0..p.n {
            assert!(p.find(i, i).is_some());
            for &j in p.row_cols(i) {
                assert!(p.find(j, i).is_some(), "pattern asymmetric at ({i}, {j})");
            }
        }
        // Interior node of the n=3 mesh touches 6 neighbors + itself.
        let interior = 1 * 4 + 1;
        assert_eq!(p.row_cols(interior).len(), 7);
    }

    #[test]
    fn scalar_matvec_matches_dense() {
        let p = small_pattern(2);
        let mut a = ScalarCsr::zeros(&p);
        let mut rng = XorShift(42);
        let mut dense = DMatrix::<f64>::zeros(p.n, p.n);
        for i in 0..p.n {
            for &j in p.row_cols(i) {
                if j >= i {
                    let v = rng.next_f64();
                    a.add(i, j, v);
                    dense[(i, j)] += v;
                    if j > i {
                        a.add(j, i, v);
                        dense[(j, i)] += v;
                    }
                }
            }
        }
        let x: Vec<f64> = (0..p.n).map(|_| rng.next_f64()).collect();
        let mut y = vec![0.0; p.n];
        a.matvec(&x, &mut y);
        let yd = &dense * DVector::from_column_slice(&x);
        for i in 0..p.n {
            assert!((y[i] - yd[i]).abs() <= 1e-13);
        }
    }

    /// Full-band pattern: every entry with |i - j| <= bw is present, so that a
    /// product L L^H of band-bw factors is exactly representable.
    fn band_pattern(n: usize, bw: usize) -> Arc<CsrPattern> {
        let mut row_ptr = vec![0usize];
        let mut col_idx = Vec::new();
        for i in 0..n {
            for j in i.saturating_sub(bw)..=(i + bw).min(n - 1) {
                col_idx.push(j);
            }
            row_ptr.push(col_idx.len());
        }
        Arc::new(CsrPattern { n, row_ptr, col_idx, bandwidth: bw })
    }

    /// Builds a banded Hermitian positive definite matrix as L L^H with L banded,
    /// returning both CSR (on a full-band pattern) and dense forms.
    fn random_hermitian_spd(n: usize, bw: usize, seed: u64) -> (ComplexCsr, DMatrix<Complex64>) {
        let p = band_pattern(n, bw);
        let mut rng = XorShift(seed);
        let mut l = DMatrix::<Complex64>::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(bw)..i {
                l[(i, j)] = Complex64::new(rng.next_f64(), rng.next_f64());
            }
            l[(i, i)] = Complex64::new(2.0 + rng.next_f64().abs(), 0.0);
        }
        let dense = &l * l.adjoint();
        let mut a = ComplexCsr::zeros(&p);
        for i in 0..n {
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                a.vals[k] = dense[(i, p.col_idx[k])];
            }
        }
        (a, dense)
    }

    #[test]
    fn complex_banded_cholesky_solves() {
        let (a, dense) = random_hermitian_spd(20, 5, 7);
        let p = Arc::clone(&a.pattern);
        let chol = BandedCholC::factor(&a).unwrap();
        let mut rng = XorShift(99);
        let b: Vec<Complex64> =
            (0..p.n).map(|_| Complex64::new(rng.next_f64(), rng.next_f64())).collect();
        let x = chol.solve(&b);
        // Residual check against the CSR operator.
        let mut ax = vec![Complex64::new(0.0, 0.0); p.n];
        a.matvec(&x, &mut ax);
        let res: f64 = ax.iter().zip(&b).map(|(u, v)| (u - v).norm_sqr()).sum::<f64>().sqrt();
        assert!(res <= 1e-10 * l2_norm_c(&b), "residual {res}");
        // And against a dense solve.
        let xd = dense.clone().lu().solve(&DVector::from_column_slice(&b)).unwrap();
        for i in 0..p.n {
            assert!((x[i] - xd[i]).norm() <= 1e-9);
        }
    }

    #[test]
    fn complex_cholesky_rejects_indefinite() {
        let p = small_pattern(2);
        let mut a = ComplexCsr::zeros(&p);
        for i in 0..p.n {
            let k = p.find(i, i).unwrap();
            a.vals[k] = Complex64::new(-1.0, 0.0);
        }
        assert!(BandedCholC::factor(&a).is_err());
    }

    #[test]
    fn real_ldl_recovers_prescribed_factors() {
        // A = L D L^T with unit lower-banded L and mixed-sign D factors exactly.
        let n = 24;
        let bw = 5;
        let mut rng = XorShift(1234);
        let mut l = DMatrix::<f64>::identity(n, n);
        for i in 0..n {
            for j in i.saturating_sub(bw)..i {
                l[(i, j)] = 0.3 * rng.next_f64();
            }
        }
        let mut dmat = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            dmat[(i, i)] = if i % 5 == 3 { -1.0 - rng.next_f64().abs() } else { 1.0 + rng.next_f64().abs() };
        }
        let a = &l * &dmat * l.transpose();
        let ldl = BandedLdl::factor_from_band(
            n,
            bw,
            |band| {
                for j in 0..n {
                    for d in 0..=bw.min(n - 1 - j) {
                        band[j * (bw + 1) + d] = a[(j + d, j)];
                    }
                }
            },
            false,
        )
        .unwrap();
        assert_eq!(ldl.perturbed_pivots, 0);
        let b: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
        let x = ldl.solve(&b);
        let xd = a.clone().lu().solve(&DVector::from_column_slice(&b)).unwrap();
        for i in 0..n {
            assert!((x[i] - xd[i]).abs() <= 1e-9, "component {i}: {} vs {}", x[i], xd[i]);
        }
    }

    #[test]
    fn spd_mode_rejects_indefinite_matrices() {
        let n = 8;
        let r = BandedLdl::factor_from_band(
            n,
            1,
            |band| {
                for j in 0..n {
                    band[j * 2] = if j == 5 { -2.0 } else { 1.0 };
                }
            },
            true,
        );
        assert!(r.is_err());
    }

    #[test]
    fn bordered_solve_matches_dense_augmented() {
        // Symmetric A with one tiny pivot direction spanned by g: the classic
        // gauge-singular Newton geometry.
        let n = 16;
        let bw = 4;
        let mut rng = XorShift(555);
        let mut l = DMatrix::<f64>::identity(n, n);
        for i in 0..n {
            for j in i.saturating_sub(bw)..i {
                l[(i, j)] = 0.2 * rng.next_f64();
            }
        }
        let mut dmat = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            dmat[(i, i)] = 1.0 + rng.next_f64().abs();
        }
        dmat[(n - 1, n - 1)] = 1e-12; // near-singular direction
        let a = &l * &dmat * l.transpose();
        let g: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
        let rhs: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();

        let ldl = BandedLdl::factor_from_band(
            n,
            bw,
            |band| {
                for j in 0..n {
                    for d in 0..=bw.min(n - 1 - j) {
                        band[j * (bw + 1) + d] = a[(j + d, j)];
                    }
                }
            },
            false,
        )
        .unwrap();
        let apply = |v: &[f64]| -> Vec<f64> {
            let av = &a * DVector::from_column_slice(v);
            av.iter().copied().collect()
        };
        let (delta, mu) = solve_bordered(&ldl, &g, &rhs, apply, 2).unwrap();

        let mut aug = DMatrix::<f64>::zeros(n + 1, n + 1);
        aug.view_mut((0, 0), (n, n)).copy_from(&a);
        for i in 0..n {
            aug[(i, n)] = g[i];
            aug[(n, i)] = g[i];
        }
        let mut b_aug = DVector::<f64>::zeros(n + 1);
        for i in 0..n {
            b_aug[i] = rhs[i];
        }
        let sol = aug.lu().solve(&b_aug).unwrap();
        for i in 0..n {
            assert!(
                (delta[i] - sol[i]).abs() <= 1e-7 * (1.0 + sol[i].abs()),
                "delta[{i}] = {} vs dense {}",
                delta[i],
                sol[i]
            );
        }
        assert!((mu - sol[n]).abs() <= 1e-7 * (1.0 + sol[n].abs()));
        // The constraint row holds.
        let gdelta: f64 = g.iter().zip(&delta).map(|(a, b)| a * b).sum();
        assert!(gdelta.abs() <= 1e-8 * l2_norm(&delta).max(1e-30));
    }

    #[test]
    fn pcg_with_exact_and_stale_preconditioners() {
        let (a, _) = random_hermitian_spd(30, 6, 31);
        let p = Arc::clone(&a.pattern);
        let chol = BandedCholC::factor(&a).unwrap();
        let mut rng = XorShift(77);
        let b: Vec<Complex64> =
            (0..p.n).map(|_| Complex64::new(rng.next_f64(), rng.next_f64())).collect();

        // Exact preconditioner converges immediately.
        let (x, iters) = pcg_complex(&a, &b, None, &chol, 1e-12, 50).unwrap();
        assert!(iters <= 1, "exact preconditioner took {iters} iterations");
        let mut ax = vec![Complex64::new(0.0, 0.0); p.n];
        a.matvec(&x, &mut ax);
        let res: f64 = ax.iter().zip(&b).map(|(u, v)| (u - v).norm_sqr()).sum::<f64>().sqrt();
        assert!(res <= 1e-11 * l2_norm_c(&b));

        // Stale preconditioner (matrix mildly perturbed on the diagonal) still
        // converges in few iterations.
        let mut a2 = a.clone();
        for i in 0..p.n {
            let k = p.find(i, i).unwrap();
            a2.vals[k] *= 1.05;
        }
        let (x2, iters2) = pcg_complex(&a2, &b, None, &chol, 1e-12, 200).unwrap();
        assert!(iters2 < 60, "stale preconditioner took {iters2} iterations");
        let mut ax2 = vec![Complex64::new(0.0, 0.0); p.n];
        a2.matvec(&x2, &mut ax2);
        let res2: f64 = ax2.iter().zip(&b).map(|(u, v)| (u - v).norm_sqr()).sum::<f64>().sqrt();
        assert!(res2 <= 1e-11 * l2_norm_c(&b));
    }

    #[test]
    fn interleave_round_trip() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert_eq!(interleaved_to_stacked(&stacked_to_interleaved(&x)), x);
        let y = stacked_to_interleaved(&x);
        assert_eq!(y[0], x[0]);
        assert_eq!(y[1], x[5]);
    }
}
