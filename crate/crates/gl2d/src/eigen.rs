//! Smallest eigenpairs of the generalized symmetric problem `A v = lambda M v`
//! and spectral certification that a minimizer is locally unique up to phase.
//!
//! The solver is shift-inverted block inverse iteration: factor `A + sigma M`
//! once, iterate a small M-orthonormal block through the inverse, and extract
//! Ritz pairs from the block every sweep. The per-pair residual stopping test
//! keeps clustered eigenvalues honest: a pair is accepted when its residual
//! converges, not when the Rayleigh quotients separate, so near-degenerate
//! pairs (which this Hessian has) cost iterations, never correctness.

use nalgebra::DMatrix;

use crate::assembly::{self, BlockOperator, Problem};
use crate::field::ComplexField;
use crate::linalg::{self, BandedLdl};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct EigenResult {
    /// `(lambda, stacked eigenvector)` sorted ascending; vectors M-orthonormal.
    pub pairs: Vec<(f64, Vec<f64>)>,
    /// Per-pair `||A v - lambda M v|| / ||M v||`.
    pub residual_norms: Vec<f64>,
    /// M-inner-product angle between the first eigenvector and the phase
    /// direction `i u_h`; only certification runs know `u_h`.
    pub gauge_angle: Option<f64>,
}

/// Certification outcome for a computed minimizer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    /// The Hessian kernel is exactly the phase direction and the rest of the
    /// spectrum is safely positive.
    LocallyUnique,
    /// One of the spectral checks failed; the string names it.
    NotCertified(String),
}

#[derive(Debug, Clone)]
pub struct UniquenessReport {
    pub eigen: EigenResult,
    pub verdict: Verdict,
}

/// Kernel threshold relative to kappa^2.
const EPS_ZERO: f64 = 1e-6;
/// Minimum accepted second eigenvalue.
const GAP_MIN: f64 = 1e-3;
/// Maximum accepted angle between the first eigenvector and `i u_h`.
const ANGLE_TOL: f64 = 1e-3;

const MAX_SWEEPS: usize = 500;

fn xorshift_unit(state: &mut u64) -> f64 {
    *state ^= *state << 13;
    *state ^= *state >> 7;
    *state ^= *state << 17;
    (*state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

fn shifted_copy(a: &BlockOperator, m: &BlockOperator, sigma: f64) -> BlockOperator {
    assert!(
        *a.pattern == *m.pattern,
        "operator and mass must share one sparsity pattern"
    );
    let mut s = a.clone();
    for (dst, src) in [
        (&mut s.rr, &m.rr),
        (&mut s.ri, &m.ri),
        (&mut s.ir, &m.ir),
        (&mut s.ii, &m.ii),
    ] {
        for (d, &v) in dst.iter_mut().zip(src) {
            *d += sigma * v;
        }
    }
    s
}

/// Probe Rayleigh quotients give the shift a spectral scale when the caller
/// has none. Returns the smallest probe quotient, floored away from zero.
fn probe_scale(a: &BlockOperator, m: &BlockOperator) -> f64 {
    let dim = a.dim();
    let mut best = f64::INFINITY;
    for seed in 1..=3u64 {
        let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15) | 1;
        let x: Vec<f64> = (0..dim).map(|_| xorshift_unit(&mut state)).collect();
        let q: f64 = a.apply_interleaved(&x).iter().zip(&x).map(|(u, v)| u * v).sum();
        let mm: f64 = m.apply_interleaved(&x).iter().zip(&x).map(|(u, v)| u * v).sum();
        if mm > 0.0 {
            best = best.min(q / mm);
        }
    }
    if best.is_finite() {
        best.abs().max(1e-8)
    } else {
        1.0
    }
}

/// Computes the `k` smallest eigenpairs of `A v = lambda M v` for symmetric A
/// and symmetric positive definite M on a shared pattern. The default shift is
/// derived from probe Rayleigh quotients; certification passes its own.
pub fn smallest_eigs(
    a: &BlockOperator,
    m: &BlockOperator,
    k: usize,
    tol: f64,
) -> Result<EigenResult> {
    smallest_eigs_with_shift(a, m, k, tol, 1e-3 * probe_scale(a, m))
}

pub fn smallest_eigs_with_shift(
    a: &BlockOperator,
    m: &BlockOperator,
    k: usize,
    tol: f64,
    sigma: f64,
) -> Result<EigenResult> {
    if k == 0 {
        return Err(Error::InvalidInput("eigenpair count k must be at least 1".into()));
    }
    if !tol.is_finite() || tol <= 0.0 {
        return Err(Error::InvalidInput(format!("eigen tolerance must be positive, got {tol}")));
    }
    let dim = a.dim();
    if k > dim {
        return Err(Error::InvalidInput(format!(
            "requested {k} eigenpairs from a dimension-{dim} problem"
        )));
    }
    let bw = a.interleaved_bandwidth();

    // Factor A + sigma M, growing the shift if the factorization is not
    // positive definite at the first attempt.
    let mut sigma = if sigma.is_finite() && sigma > 0.0 { sigma } else { 1e-8 };
    let mut factor: Option<BandedLdl> = None;
    let mut last_err = String::new();
    for _ in 0..4 {
        let shifted = shifted_copy(a, m, sigma);
        match BandedLdl::factor_from_band(dim, bw, |band| shifted.fill_interleaved_band(band), true)
        {
            Ok(f) => {
                factor = Some(f);
                break;
            }
            Err(e) => {
                last_err = e.to_string();
                sigma *= 10.0;
            }
        }
    }
    let factor = factor.ok_or_else(|| {
        Error::Eigen(format!("no positive definite shift found up to sigma = {sigma:e}: {last_err}"))
    })?;

    // Deterministic start block, padded past k so Ritz extraction resolves
    // clusters at the block boundary.
    let p = (k + 3).min(dim);
    let mut x: Vec<Vec<f64>> = Vec::with_capacity(p);
    let mut state = 0x2545f4914f6cdd1d_u64 ^ (dim as u64);
    for _ in 0..p {
        x.push((0..dim).map(|_| xorshift_unit(&mut state)).collect());
    }

    let mut theta = vec![0.0; p];
    let mut residuals = vec![f64::INFINITY; p];
    for _sweep in 0..MAX_SWEEPS {
        // Inverse step: Y = (A + sigma M)^{-1} M X.
        let mut y: Vec<Vec<f64>> = x
            .iter()
            .map(|col| {
                let mut b = m.apply_interleaved(col);
                factor.solve_in_place(&mut b);
                b
            })
            .collect();

        m_orthonormalize(&mut y, m)?;

        // Rayleigh-Ritz on the original pencil restricted to span(Y).
        let ay: Vec<Vec<f64>> = y.iter().map(|col| a.apply_interleaved(col)).collect();
        let mut ar = DMatrix::<f64>::zeros(p, p);
        for i in 0..p {
            for j in 0..=i {
                let v: f64 = y[i].iter().zip(&ay[j]).map(|(u, w)| u * w).sum();
                ar[(i, j)] = v;
                ar[(j, i)] = v;
            }
        }
        let eig = ar.symmetric_eigen();
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());

        let mut next: Vec<Vec<f64>> = Vec::with_capacity(p);
        for (slot, &idx) in order.iter().enumerate() {
            theta[slot] = eig.eigenvalues[idx];
            let mut col = vec![0.0; dim];
            for (ci, ycol) in y.iter().enumerate() {
                let s = eig.eigenvectors[(ci, idx)];
                if s != 0.0 {
                    for (c, &v) in col.iter_mut().zip(ycol) {
                        *c += s * v;
                    }
                }
            }
            next.push(col);
        }
        x = next;

        // Per-pair residuals on the first k Ritz pairs.
        let mut done = true;
        for i in 0..p {
            let av = a.apply_interleaved(&x[i]);
            let mv = m.apply_interleaved(&x[i]);
            let mut num = 0.0;
            for kk in 0..dim {
                let r = av[kk] - theta[i] * mv[kk];
                num += r * r;
            }
            let den = linalg::l2_norm(&mv).max(f64::MIN_POSITIVE);
            residuals[i] = num.sqrt() / den;
            if i < k && residuals[i] > tol * theta[i].abs().max(1.0) {
                done = false;
            }
        }
        if done {
            let mut pairs = Vec::with_capacity(k);
            for i in 0..k {
                pairs.push((theta[i], linalg::interleaved_to_stacked(&x[i])));
            }
            return Ok(EigenResult {
                pairs,
                residual_norms: residuals[..k].to_vec(),
                gauge_angle: None,
            });
        }
    }
    Err(Error::Eigen(format!(
        "no convergence after {MAX_SWEEPS} sweeps; residuals {:?}",
        &residuals[..k.min(residuals.len())]
    )))
}

/// Twice-through modified Gram-Schmidt in the M inner product. Caches the
/// M-image of each finished column so a pass costs one matvec per column.
fn m_orthonormalize(cols: &mut [Vec<f64>], m: &BlockOperator) -> Result<()> {
    for _pass in 0..2 {
        let mut m_done: Vec<Vec<f64>> = Vec::with_capacity(cols.len());
        for i in 0..cols.len() {
            let mut mi = m.apply_interleaved(&cols[i]);
            for j in 0..i {
                let c: f64 = cols[j].iter().zip(&mi).map(|(u, v)| u * v).sum();
                if c != 0.0 {
                    let (head, tail) = cols.split_at_mut(i);
                    for (t, &s) in tail[0].iter_mut().zip(&head[j]) {
                        *t -= c * s;
                    }
                    for (t, &s) in mi.iter_mut().zip(&m_done[j]) {
                        *t -= c * s;
                    }
                }
            }
            let norm2: f64 = cols[i].iter().zip(&mi).map(|(u, v)| u * v).sum();
            if !(norm2 > 0.0) || !norm2.is_finite() {
                return Err(Error::Eigen(format!(
                    "iteration block lost rank (column {i} has M-norm^2 {norm2:e})"
                )));
            }
            let inv = 1.0 / norm2.sqrt();
            for v in cols[i].iter_mut() {
                *v *= inv;
            }
            for v in mi.iter_mut() {
                *v *= inv;
            }
            m_done.push(mi);
        }
    }
    Ok(())
}

/// Assembles the Hessian at `u_h`, computes the `k` smallest eigenpairs, and
/// checks the three uniqueness conditions: the smallest eigenvalue is numerical
/// zero, its eigenvector is the phase direction `i u_h`, and the next
/// eigenvalue is safely positive.
pub fn verify_local_uniqueness(
    u_h: &ComplexField,
    problem: &Problem,
    k: usize,
) -> Result<UniquenessReport> {
    let k = k.max(2);
    let mesh = u_h.mesh();
    let h = assembly::hessian(u_h, problem);
    let mb = assembly::mass_block(mesh);
    let kappa = problem.kappa();
    let sigma = if kappa > 0.0 { 1e-3 * kappa * kappa } else { 1e-3 * probe_scale(&h, &mb) };
    let mut eigen = smallest_eigs_with_shift(&h, &mb, k, 1e-8, sigma)?;

    // Angle between the first eigenvector and i u_h in the M inner product.
    let iu = assembly::i_times_coeffs(u_h);
    let m_iu = mb.apply(&iu);
    let v1 = &eigen.pairs[0].1;
    let num: f64 = v1.iter().zip(&m_iu).map(|(a, b)| a * b).sum();
    let iu_norm = {
        let q: f64 = iu.iter().zip(&m_iu).map(|(a, b)| a * b).sum();
        q.sqrt()
    };
    let v1_norm = {
        let mv = mb.apply(v1);
        let q: f64 = v1.iter().zip(&mv).map(|(a, b)| a * b).sum();
        q.sqrt()
    };
    let denom = iu_norm * v1_norm;
    let angle = if denom > 0.0 {
        (num.abs() / denom).min(1.0).acos()
    } else {
        std::f64::consts::FRAC_PI_2
    };
    eigen.gauge_angle = Some(angle);

    let lambda1 = eigen.pairs[0].0;
    let lambda2 = eigen.pairs[1].0;
    let verdict = if lambda1 > EPS_ZERO * kappa * kappa {
        Verdict::NotCertified(format!(
            "kernel eigenvalue {lambda1:.3e} exceeds {:.1e}",
            EPS_ZERO * kappa * kappa
        ))
    } else if lambda2 < GAP_MIN {
        Verdict::NotCertified(format!("second eigenvalue {lambda2:.3e} below {GAP_MIN:.1e}"))
    } else if angle > ANGLE_TOL {
        Verdict::NotCertified(format!("gauge angle {angle:.3e} rad exceeds {ANGLE_TOL:.1e}"))
    } else {
        Verdict::LocallyUnique
    };
    Ok(UniquenessReport { eigen, verdict })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_aa, assemble_ahat, hessian, mass_block, Potential};
    use crate::field::ComplexField;
    use crate::mesh::Mesh2D;
    use crate::minimize::{minimize, SolverConfig};
    use num_complex::Complex64;
    use std::sync::Arc;

    fn mesh(n: usize) -> Arc<Mesh2D> {
        Arc::new(Mesh2D::build_uniform(n).unwrap())
    }

    fn dense_eigs(a: &BlockOperator, m: &BlockOperator) -> Vec<f64> {
        let (vals, _) = crate::dense::generalized_symmetric_eigs(
            &crate::dense::block_to_dense(a),
            &crate::dense::block_to_dense(m),
        )
        .unwrap();
        vals
    }

    #[test]
    fn mass_pencil_has_unit_spectrum() {
        let m = mesh(3);
        let mb = mass_block(&m);
        let result = smallest_eigs(&mb, &mb, 4, 1e-10).unwrap();
        for (lambda, _) in &result.pairs {
            assert!((lambda - 1.0).abs() <= 1e-10, "lambda = {lambda}");
        }
        for r in &result.residual_norms {
            assert!(*r <= 1e-10);
        }
    }

    #[test]
    fn matches_dense_oracle_on_positive_definite_pencil() {
        let m = mesh(3);
        let problem = Problem::new(2.0, Potential::Sinusoidal).unwrap();
        let a = assemble_ahat(&problem, &m);
        let mb = mass_block(&m);
        let result = smallest_eigs(&a, &mb, 5, 1e-11).unwrap();
        let oracle = dense_eigs(&a, &mb);
        for (i, (lambda, _)) in result.pairs.iter().enumerate() {
            assert!(
                (lambda - oracle[i]).abs() <= 1e-9,
                "pair {i}: {lambda} vs oracle {}",
                oracle[i]
            );
        }
    }

    #[test]
    fn resolves_exactly_degenerate_pairs() {
        // The magnetic form with zero potential is two uncoupled stiffness
        // blocks, so every eigenvalue of the scalar problem appears twice.
        let m = mesh(6);
        let problem = Problem::new(1.0, Potential::Zero).unwrap();
        let a = assemble_aa(&problem, &m);
        let mb = mass_block(&m);
        assert!(a.dim() <= 200);
        let result = smallest_eigs(&a, &mb, 5, 1e-11).unwrap();
        let oracle = dense_eigs(&a, &mb);
        for (i, (lambda, _)) in result.pairs.iter().enumerate() {
            assert!(
                (lambda - oracle[i]).abs() <= 1e-9,
                "pair {i}: {lambda} vs oracle {}",
                oracle[i]
            );
        }
        // The doubled kernel: two numerical zeros.
        assert!(result.pairs[0].0.abs() <= 1e-9);
        assert!(result.pairs[1].0.abs() <= 1e-9);
        assert!(result.pairs[2].0 > 1e-2);
    }

    #[test]
    fn neumann_kernel_vector_is_constant() {
        let m = mesh(4);
        let problem = Problem::new(0.0, Potential::Zero).unwrap();
        let a = assemble_aa(&problem, &m);
        let mb = mass_block(&m);
        let result = smallest_eigs(&a, &mb, 2, 1e-11).unwrap();
        let nn = m.num_nodes();
        for (lambda, v) in &result.pairs {
            assert!(lambda.abs() <= 1e-9);
            // Each block of a kernel vector is nodally constant.
            for block in [&v[..nn], &v[nn..]] {
                let mean = block.iter().sum::<f64>() / nn as f64;
                for &val in block {
                    assert!((val - mean).abs() <= 1e-8);
                }
            }
        }
    }

    #[test]
    fn returned_vectors_are_m_orthonormal() {
        let m = mesh(3);
        let problem = Problem::new(2.0, Potential::Sinusoidal).unwrap();
        let a = assemble_ahat(&problem, &m);
        let mb = mass_block(&m);
        let result = smallest_eigs(&a, &mb, 5, 1e-11).unwrap();
        for i in 0..result.pairs.len() {
            let mv = mb.apply(&result.pairs[i].1);
            for j in 0..result.pairs.len() {
                let dot: f64 = result.pairs[j].1.iter().zip(&mv).map(|(u, v)| u * v).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() <= 1e-10, "({i}, {j}) product {dot}");
            }
        }
    }

    #[test]
    fn hessian_spectrum_is_phase_invariant() {
        let m = mesh(4);
        let problem = Problem::new(2.0, Potential::Sinusoidal).unwrap();
        let u = ComplexField::interpolate(
            |x, y| Complex64::new(0.4 + x * y, 0.3 - 0.2 * x + 0.1 * y),
            &m,
        )
        .unwrap();
        let rotated = u.scaled(Complex64::from_polar(1.0, 0.83));
        let mb = mass_block(&m);
        let s1 = smallest_eigs(&hessian(&u, &problem), &mb, 4, 1e-11).unwrap();
        let s2 = smallest_eigs(&hessian(&rotated, &problem), &mb, 4, 1e-11).unwrap();
        for (p1, p2) in s1.pairs.iter().zip(&s2.pairs) {
            assert!((p1.0 - p2.0).abs() <= 1e-9, "{} vs {}", p1.0, p2.0);
        }
    }

    #[test]
    fn certifies_a_small_minimizer() {
        // The converged minimizer at kappa = 2, n = 8 has spectrum
        // (0, 0.0933, 0.812, 0.814, 9.90) by a dense oracle; the kernel is the
        // phase direction.
        let m = mesh(8);
        let problem = Problem::new(2.0, Potential::Sinusoidal).unwrap();
        let start = ComplexField::constant(&m, Complex64::new(0.8, 0.6));
        let report = minimize(&start, &problem, &SolverConfig::default()).unwrap();
        assert!(report.converged);
        let cert = verify_local_uniqueness(&report.field, &problem, 5).unwrap();
        assert_eq!(cert.verdict, Verdict::LocallyUnique);
        let lambdas: Vec<f64> = cert.eigen.pairs.iter().map(|p| p.0).collect();
        assert!(lambdas[0].abs() <= 4e-6, "kernel eigenvalue {:.3e}", lambdas[0]);
        let expected = [0.0932767052766, 0.812438044132, 0.813587070631, 9.90399234662];
        for (got, want) in lambdas[1..].iter().zip(expected) {
            assert!((got - want).abs() <= 1e-5, "{got} vs dense oracle {want}");
        }
        assert!(cert.eigen.gauge_angle.unwrap() <= 1e-3);
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = mesh(2);
        let mb = mass_block(&m);
        assert!(smallest_eigs(&mb, &mb, 0, 1e-10).is_err());
        assert!(smallest_eigs(&mb, &mb, 3, -1.0).is_err());
        assert!(smallest_eigs(&mb, &mb, 10_000, 1e-10).is_err());
    }
}
