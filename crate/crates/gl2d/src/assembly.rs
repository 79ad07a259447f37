//! Assembly of every form in the model: mass matrix, magnetic form, stabilized
//! form, weighted mass, the energy, its gradient, and its real block Hessian.
//!
//! Fields are complex P1 functions written as `u = u^Re + i u^Im`; real-linear
//! operators act on stacked coefficient vectors (all real parts, then all
//! imaginary parts) through [`BlockOperator`]. One shared quadrature rule keeps
//! every assembled matrix exactly symmetric.

use std::sync::Arc;

use num_complex::Complex64;

use crate::field::ComplexField;
use crate::linalg::{CsrPattern, ScalarCsr};
use crate::mesh::{Mesh2D, QuadratureRule};
use crate::{Error, Result};

/// Magnetic vector potential choices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Potential {
    /// `A(x, y) = sqrt(2) * (sin(pi x) cos(pi y), -cos(pi x) sin(pi y))`:
    /// divergence-free, tangent to the boundary, sup-norm sqrt(2).
    Sinusoidal,
    Zero,
}

impl Potential {
    pub fn eval(&self, x: f64, y: f64) -> [f64; 2] {
        match self {
            Potential::Sinusoidal => {
                let s = std::f64::consts::SQRT_2;
                let (px, py) = (std::f64::consts::PI * x, std::f64::consts::PI * y);
                [s * px.sin() * py.cos(), -s * px.cos() * py.sin()]
            }
            Potential::Zero => [0.0, 0.0],
        }
    }

    /// Sup-norm bound of the potential over the unit square.
    pub fn a_inf(&self) -> f64 {
        match self {
            Potential::Sinusoidal => std::f64::consts::SQRT_2,
            Potential::Zero => 0.0,
        }
    }
}

/// A fixed physical setup: coupling constant, potential, stabilization weight,
/// and the quadrature rule shared by all assembled forms.
#[derive(Debug, Clone)]
pub struct Problem {
    kappa: f64,
    potential: Potential,
    beta_sq: f64,
    quad: QuadratureRule,
}

impl Problem {
    /// Builds a problem with the default degree-5 quadrature. Rejects negative
    /// or non-finite kappa.
    pub fn new(kappa: f64, potential: Potential) -> Result<Problem> {
        Problem::with_quadrature(kappa, potential, QuadratureRule::for_degree(5)?)
    }

    pub fn with_quadrature(
        kappa: f64,
        potential: Potential,
        quad: QuadratureRule,
    ) -> Result<Problem> {
        if !kappa.is_finite() || kappa < 0.0 {
            return Err(Error::InvalidInput(format!("kappa must be finite and >= 0, got {kappa}")));
        }
        let a_inf = potential.a_inf();
        let beta_sq = kappa * kappa * (a_inf * a_inf + 1.0);
        Ok(Problem { kappa, potential, beta_sq, quad })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn potential(&self) -> Potential {
        self.potential
    }

    /// Stabilization weight `beta^2 = kappa^2 (a_inf^2 + 1)`.
    pub fn beta_sq(&self) -> f64 {
        self.beta_sq
    }

    pub fn quad(&self) -> &QuadratureRule {
        &self.quad
    }
}

/// Symmetric real 2N x 2N operator in block form over one scalar sparsity
/// pattern. Acting on a stacked vector `(x^Re; x^Im)`:
///
/// ```text
/// y^Re = RR x^Re + IR x^Im
/// y^Im = RI x^Re + II x^Im
/// ```
///
/// `RR` and `II` are symmetric and `RI = IR^T`, so the full matrix is symmetric.
#[derive(Debug, Clone)]
pub struct BlockOperator {
    pub pattern: Arc<CsrPattern>,
    pub rr: Vec<f64>,
    pub ri: Vec<f64>,
    pub ir: Vec<f64>,
    pub ii: Vec<f64>,
}

impl BlockOperator {
    pub fn zeros(pattern: &Arc<CsrPattern>) -> Self {
        let nnz = pattern.nnz();
        BlockOperator {
            pattern: Arc::clone(pattern),
            rr: vec![0.0; nnz],
            ri: vec![0.0; nnz],
            ir: vec![0.0; nnz],
            ii: vec![0.0; nnz],
        }
    }

    pub fn dim(&self) -> usize {
        2 * self.pattern.n
    }

    /// y = A x on stacked vectors.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.pattern.n;
        assert_eq!(x.len(), 2 * n);
        let mut y = vec![0.0; 2 * n];
        let (xr, xi) = x.split_at(n);
        let (yr, yi) = y.split_at_mut(n);
        for i in 0..n {
            let mut acc_r = 0.0;
            let mut acc_i = 0.0;
            for k in self.pattern.row_ptr[i]..self.pattern.row_ptr[i + 1] {
                let j = self.pattern.col_idx[k];
                acc_r += self.rr[k] * xr[j] + self.ir[k] * xi[j];
                acc_i += self.ri[k] * xr[j] + self.ii[k] * xi[j];
            }
            yr[i] = acc_r;
            yi[i] = acc_i;
        }
        y
    }

    /// Quadratic form x^T A x.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        self.apply(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// A + scale * diag(S, S) for a scalar matrix S on the same pattern.
    pub fn add_scalar_diag(&mut self, s: &ScalarCsr, scale: f64) {
        assert!(
            Arc::ptr_eq(&self.pattern, &s.pattern) || *self.pattern == *s.pattern,
            "pattern mismatch"
        );
        for (k, &v) in s.vals.iter().enumerate() {
            self.rr[k] += scale * v;
            self.ii[k] += scale * v;
        }
    }

    /// Largest absolute entry over all four blocks (scale estimation).
    pub fn max_abs(&self) -> f64 {
        self.rr
            .iter()
            .chain(&self.ri)
            .chain(&self.ir)
            .chain(&self.ii)
            .fold(0.0_f64, |m, &v| m.max(v.abs()))
    }

    /// Bandwidth of the matrix in interleaved ordering
    /// `(re_0, im_0, re_1, im_1, ...)`.
    pub fn interleaved_bandwidth(&self) -> usize {
        2 * self.pattern.bandwidth + 1
    }

    /// Writes the lower triangle into column-major band storage with stride
    /// `interleaved_bandwidth() + 1`: slot `j*(bw+1) + d` receives the
    /// interleaved entry `A[j+d, j]`.
    pub fn fill_interleaved_band(&self, band: &mut [f64]) {
        let stride = self.interleaved_bandwidth() + 1;
        let p = &self.pattern;
        for r in 0..p.n {
            for k in p.row_ptr[r]..p.row_ptr[r + 1] {
                let c = p.col_idx[k];
                if c > r {
                    continue;
                }
                let d = 2 * (r - c);
                band[2 * c * stride + d] = self.rr[k];
                band[2 * c * stride + d + 1] = self.ri[k];
                band[(2 * c + 1) * stride + d] = self.ii[k];
                if r > c {
                    band[(2 * c + 1) * stride + d - 1] = self.ir[k];
                }
            }
        }
    }

    /// y = A x with x and y in interleaved ordering.
    pub fn apply_interleaved(&self, x: &[f64]) -> Vec<f64> {
        let p = &self.pattern;
        let n = p.n;
        assert_eq!(x.len(), 2 * n);
        let mut y = vec![0.0; 2 * n];
        for i in 0..n {
            let mut acc_r = 0.0;
            let mut acc_i = 0.0;
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                let j = p.col_idx[k];
                acc_r += self.rr[k] * x[2 * j] + self.ir[k] * x[2 * j + 1];
                acc_i += self.ri[k] * x[2 * j] + self.ii[k] * x[2 * j + 1];
            }
            y[2 * i] = acc_r;
            y[2 * i + 1] = acc_i;
        }
        y
    }
}

/// Per-element context passed to assembly kernels: quadrature points with
/// physical coordinates, hat values, and the potential evaluated there.
struct ElementQuad {
    /// weight * det per quadrature point.
    wdet: Vec<f64>,
    /// Hat function values per point (the barycentric coordinates).
    lam: Vec<[f64; 3]>,
    /// Potential vector per point.
    a: Vec<[f64; 2]>,
    /// |A|^2 per point.
    a2: Vec<f64>,
}

fn element_quad(
    mesh: &Mesh2D,
    quad: &QuadratureRule,
    potential: Potential,
    t: usize,
) -> ElementQuad {
    let tri = mesh.triangles()[t];
    let det = mesh.dets()[t];
    let p0 = mesh.coords()[tri[0]];
    let p1 = mesh.coords()[tri[1]];
    let p2 = mesh.coords()[tri[2]];
    let npts = quad.points().len();
    let mut wdet = Vec::with_capacity(npts);
    let mut lam = Vec::with_capacity(npts);
    let mut a = Vec::with_capacity(npts);
    let mut a2 = Vec::with_capacity(npts);
    for (pt, &w) in quad.points().iter().zip(quad.weights()) {
        let x = pt[0] * p0[0] + pt[1] * p1[0] + pt[2] * p2[0];
        let y = pt[0] * p0[1] + pt[1] * p1[1] + pt[2] * p2[1];
        let av = potential.eval(x, y);
        wdet.push(w * det);
        lam.push(*pt);
        a.push(av);
        a2.push(av[0] * av[0] + av[1] * av[1]);
    }
    ElementQuad { wdet, lam, a, a2 }
}

/// P1 mass matrix, exact for the default rule.
pub fn mass_matrix(mesh: &Mesh2D) -> ScalarCsr {
    mass_matrix_on(&CsrPattern::from_mesh(mesh), mesh)
}

/// [`mass_matrix`] on a caller-provided pattern (solver loops reuse one).
pub fn mass_matrix_on(pattern: &Arc<CsrPattern>, mesh: &Mesh2D) -> ScalarCsr {
    let mut m = ScalarCsr::zeros(pattern);
    let quad = QuadratureRule::for_degree(5).expect("degree 5 is supported");
    for (t, &det) in mesh.triangles().iter().zip(mesh.dets()) {
        let mut local = [[0.0; 3]; 3];
        for (pt, &w) in quad.points().iter().zip(quad.weights()) {
            for a in 0..3 {
                for b in 0..3 {
                    local[a][b] += w * det * pt[a] * pt[b];
                }
            }
        }
        for a in 0..3 {
            for b in 0..3 {
                m.add(t[a], t[b], local[a][b]);
            }
        }
    }
    m
}

/// Mass matrix weighted by the squared modulus of `weight`: entries
/// `integral of |weight|^2 phi_k phi_j`, exact (degree-4 integrand).
pub fn weighted_mass(weight: &ComplexField, mesh: &Mesh2D) -> ScalarCsr {
    weighted_mass_on(&CsrPattern::from_mesh(mesh), weight, mesh)
}

/// [`weighted_mass`] on a caller-provided pattern.
pub fn weighted_mass_on(pattern: &Arc<CsrPattern>, weight: &ComplexField, mesh: &Mesh2D) -> ScalarCsr {
    let mut m = ScalarCsr::zeros(pattern);
    let quad = QuadratureRule::for_degree(5).expect("degree 5 is supported");
    for (t, &det) in mesh.triangles().iter().zip(mesh.dets()) {
        let vals = [weight.value(t[0]), weight.value(t[1]), weight.value(t[2])];
        let mut local = [[0.0; 3]; 3];
        for (pt, &w) in quad.points().iter().zip(quad.weights()) {
            let uq = pt[0] * vals[0] + pt[1] * vals[1] + pt[2] * vals[2];
            let dens = uq.norm_sqr();
            let wd = w * det * dens;
            for a in 0..3 {
                for b in 0..3 {
                    local[a][b] += wd * pt[a] * pt[b];
                }
            }
        }
        for a in 0..3 {
            for b in 0..3 {
                m.add(t[a], t[b], local[a][b]);
            }
        }
    }
    m
}

/// Scalar parts of the magnetic form: the complex-linear operator `D - i C`
/// with `D = stiffness + kappa^2 |A|^2 mass` (symmetric) and
/// `C_jk = kappa * integral of (phi_j A.grad(phi_k) - phi_k A.grad(phi_j))`
/// (antisymmetric). The real block form is `[[D, C], [-C, D]]`.
pub struct MagneticParts {
    pub d: ScalarCsr,
    pub c: ScalarCsr,
}

/// Assembles the scalar parts of the magnetic form; see [`MagneticParts`].
pub fn assemble_magnetic_parts(problem: &Problem, mesh: &Mesh2D) -> MagneticParts {
    assemble_magnetic_parts_on(&CsrPattern::from_mesh(mesh), problem, mesh)
}

/// [`assemble_magnetic_parts`] on a caller-provided pattern.
pub fn assemble_magnetic_parts_on(
    pattern: &Arc<CsrPattern>,
    problem: &Problem,
    mesh: &Mesh2D,
) -> MagneticParts {
    let mut d = ScalarCsr::zeros(pattern);
    let mut c = ScalarCsr::zeros(pattern);
    let kappa = problem.kappa();
    for t in 0..mesh.num_triangles() {
        let tri = mesh.triangles()[t];
        let det = mesh.dets()[t];
        let g = &mesh.grads()[t];
        let eq = element_quad(mesh, problem.quad(), problem.potential(), t);
        let mut dloc = [[0.0; 3]; 3];
        let mut cloc = [[0.0; 3]; 3];
        // Stiffness: gradients constant, area = det / 2.
        for a in 0..3 {
            for b in 0..3 {
                dloc[a][b] += 0.5 * det * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
            }
        }
        for q in 0..eq.wdet.len() {
            let wd = eq.wdet[q];
            let lam = eq.lam[q];
            let av = eq.a[q];
            let adotg: [f64; 3] =
                [av[0] * g[0][0] + av[1] * g[0][1], av[0] * g[1][0] + av[1] * g[1][1], av[0] * g[2][0] + av[1] * g[2][1]];
            for a in 0..3 {
                for b in 0..3 {
                    dloc[a][b] += wd * kappa * kappa * eq.a2[q] * lam[a] * lam[b];
                    cloc[a][b] += wd * kappa * (lam[a] * adotg[b] - lam[b] * adotg[a]);
                }
            }
        }
        for a in 0..3 {
            for b in 0..3 {
                d.add(tri[a], tri[b], dloc[a][b]);
                c.add(tri[a], tri[b], cloc[a][b]);
            }
        }
    }
    MagneticParts { d, c }
}

/// The magnetic form as a real block operator:
/// `RR = II = D`, `IR = C`, `RI = C^T = -C`. Positive semidefinite.
pub fn assemble_aa(problem: &Problem, mesh: &Mesh2D) -> BlockOperator {
    let parts = assemble_magnetic_parts(problem, mesh);
    block_from_parts(&parts)
}

fn block_from_parts(parts: &MagneticParts) -> BlockOperator {
    let pattern = Arc::clone(&parts.d.pattern);
    let mut op = BlockOperator::zeros(&pattern);
    op.rr.copy_from_slice(&parts.d.vals);
    op.ii.copy_from_slice(&parts.d.vals);
    op.ir.copy_from_slice(&parts.c.vals);
    // C is antisymmetric, so the transpose block is -C on the same slots.
    for (k, &v) in parts.c.vals.iter().enumerate() {
        op.ri[k] = -v;
    }
    op
}

/// The stabilized form: magnetic form plus `beta^2` times block-diagonal mass.
/// Symmetric positive definite for kappa > 0 (and for the zero potential at
/// kappa = 0 it degenerates to the pure Neumann stiffness, only semidefinite).
pub fn assemble_ahat(problem: &Problem, mesh: &Mesh2D) -> BlockOperator {
    let mut op = assemble_aa(problem, mesh);
    let m = mass_matrix(mesh);
    op.add_scalar_diag(&m, problem.beta_sq());
    op
}

/// Coarse-space Galerkin matrix of the stabilized form, assembled element by
/// element on the fine mesh with coarse hat functions as arguments. For nested
/// meshes every fine element lies inside one coarse element, so this is the
/// exact matrix of the form restricted to the coarse space under the fine
/// quadrature: `c^T G c = (P c)^T Ahat_fine (P c)` for the exact prolongation
/// P. With `fine == coarse` it reproduces `assemble_ahat` up to summation
/// order.
pub fn two_grid_ahat(problem: &Problem, fine: &Mesh2D, coarse: &Mesh2D) -> Result<BlockOperator> {
    let (nf, nc) = (fine.n(), coarse.n());
    if nf % nc != 0 {
        return Err(Error::InvalidInput(format!(
            "meshes are not nested: fine n = {nf} is not a multiple of coarse n = {nc}"
        )));
    }
    let kappa = problem.kappa();
    let beta_sq = problem.beta_sq();
    let ncf = nc as f64;
    let pattern = CsrPattern::from_mesh(coarse);
    let mut op = BlockOperator::zeros(&pattern);
    for t in 0..fine.num_triangles() {
        let tri_f = fine.triangles()[t];
        let det = fine.dets()[t];
        let p = [fine.coords()[tri_f[0]], fine.coords()[tri_f[1]], fine.coords()[tri_f[2]]];
        let cx = (p[0][0] + p[1][0] + p[2][0]) / 3.0;
        let cy = (p[0][1] + p[1][1] + p[2][1]) / 3.0;
        // Containing coarse cell: centroids of nested elements never land on a
        // coarse grid line or cell diagonal, so floor and the diagonal test
        // are unambiguous.
        let ic = ((cx * ncf).floor() as usize).min(nc - 1);
        let jc = ((cy * ncf).floor() as usize).min(nc - 1);
        let (fx, fy) = (cx * ncf - ic as f64, cy * ncf - jc as f64);
        let tc = 2 * (jc * nc + ic) + usize::from(fx <= fy);
        let tri_c = coarse.triangles()[tc];
        let gc = &coarse.grads()[tc];
        let v0 = coarse.coords()[tri_c[0]];

        let mut dloc = [[0.0; 3]; 3];
        let mut cloc = [[0.0; 3]; 3];
        let mut mloc = [[0.0; 3]; 3];
        // Coarse gradients are still constant over the fine element.
        for a in 0..3 {
            for b in 0..3 {
                dloc[a][b] = 0.5 * det * (gc[a][0] * gc[b][0] + gc[a][1] * gc[b][1]);
            }
        }
        for (pt, &w) in problem.quad().points().iter().zip(problem.quad().weights()) {
            let x = pt[0] * p[0][0] + pt[1] * p[1][0] + pt[2] * p[2][0];
            let y = pt[0] * p[0][1] + pt[1] * p[1][1] + pt[2] * p[2][1];
            let av = problem.potential().eval(x, y);
            let a2 = av[0] * av[0] + av[1] * av[1];
            let wd = w * det;
            // Coarse hat values by affine evaluation from vertex 0.
            let mut lam = [
                gc[0][0] * (x - v0[0]) + gc[0][1] * (y - v0[1]) + 1.0,
                gc[1][0] * (x - v0[0]) + gc[1][1] * (y - v0[1]),
                gc[2][0] * (x - v0[0]) + gc[2][1] * (y - v0[1]),
            ];
            debug_assert!(
                (lam[0] + lam[1] + lam[2] - 1.0).abs() < 1e-10
                    && lam.iter().all(|&l| l >= -1e-10),
                "fine quadrature point left its coarse element"
            );
            for l in lam.iter_mut() {
                *l = l.max(0.0);
            }
            let adotg = [
                av[0] * gc[0][0] + av[1] * gc[0][1],
                av[0] * gc[1][0] + av[1] * gc[1][1],
                av[0] * gc[2][0] + av[1] * gc[2][1],
            ];
            for a in 0..3 {
                for b in 0..3 {
                    dloc[a][b] += wd * kappa * kappa * a2 * lam[a] * lam[b];
                    cloc[a][b] += wd * kappa * (lam[a] * adotg[b] - lam[b] * adotg[a]);
                    mloc[a][b] += wd * lam[a] * lam[b];
                }
            }
        }
        for a in 0..3 {
            for b in 0..3 {
                let k = pattern
                    .find(tri_c[a], tri_c[b])
                    .expect("nodes of one coarse element are pattern neighbors");
                let v = dloc[a][b] + beta_sq * mloc[a][b];
                op.rr[k] += v;
                op.ii[k] += v;
                op.ir[k] += cloc[a][b];
                op.ri[k] -= cloc[a][b];
            }
        }
    }
    Ok(op)
}

/// Total energy of a field.
pub fn energy(u: &ComplexField, problem: &Problem) -> f64 {
    let mesh = u.mesh().as_ref();
    let kappa = problem.kappa();
    let quad = problem.quad();
    let mut total = 0.0;
    for t in 0..mesh.num_triangles() {
        let tri = mesh.triangles()[t];
        let g = &mesh.grads()[t];
        let vals = [u.value(tri[0]), u.value(tri[1]), u.value(tri[2])];
        let mut gx = Complex64::new(0.0, 0.0);
        let mut gy = Complex64::new(0.0, 0.0);
        for v in 0..3 {
            gx += vals[v] * g[v][0];
            gy += vals[v] * g[v][1];
        }
        let eq = element_quad(mesh, quad, problem.potential(), t);
        let mut local = 0.0;
        for q in 0..eq.wdet.len() {
            let lam = eq.lam[q];
            let uq = lam[0] * vals[0] + lam[1] * vals[1] + lam[2] * vals[2];
            let av = eq.a[q];
            // |grad u + i kappa A u|^2 expanded into gradient, cross, and
            // potential terms; the cross term is 2 kappa Im((A.grad u) conj(u)).
            let ga = gx * av[0] + gy * av[1];
            let cov = gx.norm_sqr()
                + gy.norm_sqr()
                + 2.0 * kappa * (ga * uq.conj()).im
                + kappa * kappa * eq.a2[q] * uq.norm_sqr();
            let pot = 1.0 - uq.norm_sqr();
            local += eq.wdet[q] * (0.5 * cov + 0.25 * kappa * kappa * pot * pot);
        }
        total += local;
    }
    total
}

/// Gradient of the energy in stacked coefficients: component `j` pairs the
/// derivative with the real hat `phi_j`, component `N + j` with `i phi_j`.
pub fn residual(u: &ComplexField, problem: &Problem) -> Vec<f64> {
    let mesh = u.mesh().as_ref();
    let n = mesh.num_nodes();
    let kappa = problem.kappa();
    let k2 = kappa * kappa;
    let quad = problem.quad();
    let mut out = vec![0.0; 2 * n];
    for t in 0..mesh.num_triangles() {
        let tri = mesh.triangles()[t];
        let det = mesh.dets()[t];
        let g = &mesh.grads()[t];
        let vals = [u.value(tri[0]), u.value(tri[1]), u.value(tri[2])];
        let mut gx = Complex64::new(0.0, 0.0);
        let mut gy = Complex64::new(0.0, 0.0);
        for v in 0..3 {
            gx += vals[v] * g[v][0];
            gy += vals[v] * g[v][1];
        }
        let eq = element_quad(mesh, quad, problem.potential(), t);
        let mut acc = [Complex64::new(0.0, 0.0); 3];
        // Constant-gradient part: grad(u).grad(phi_b) over the element.
        for b in 0..3 {
            let dot = gx * g[b][0] + gy * g[b][1];
            acc[b] += 0.5 * det * dot;
        }
        for q in 0..eq.wdet.len() {
            let wd = eq.wdet[q];
            let lam = eq.lam[q];
            let av = eq.a[q];
            let uq = lam[0] * vals[0] + lam[1] * vals[1] + lam[2] * vals[2];
            let ga = gx * av[0] + gy * av[1];
            let nonlin = k2 * (uq.norm_sqr() - 1.0) * uq;
            for b in 0..3 {
                let adotgb = av[0] * g[b][0] + av[1] * g[b][1];
                // Remaining terms of (grad u + i kappa A u).(conj(grad phi_b) -
                // i kappa A phi_b) plus the quartic derivative:
                let term = Complex64::new(0.0, -kappa * lam[b]) * ga
                    + Complex64::new(0.0, kappa * adotgb) * uq
                    + (k2 * eq.a2[q] * lam[b]) * uq
                    + nonlin * lam[b];
                acc[b] += wd * term;
            }
        }
        for b in 0..3 {
            out[tri[b]] += acc[b].re;
            out[n + tri[b]] += acc[b].im;
        }
    }
    out
}

/// Second derivative of the energy at `u` as a symmetric block operator: the
/// Jacobian of [`residual`]. With `w = kappa^2 (|A|^2 - 1)` the blocks are
///
/// ```text
/// RR = stiffness + mass(w + kappa^2 (3 uRe^2 + uIm^2))
/// II = stiffness + mass(w + kappa^2 (uRe^2 + 3 uIm^2))
/// IR = C + mass(2 kappa^2 uRe uIm),  RI = IR^T
/// ```
///
/// where `C` is the antisymmetric magnetic coupling and the `mass(.)` weights
/// are evaluated pointwise at quadrature nodes.
pub fn hessian(u: &ComplexField, problem: &Problem) -> BlockOperator {
    let mesh = u.mesh().as_ref();
    let pattern = CsrPattern::from_mesh(mesh);
    let mut op = BlockOperator::zeros(&pattern);
    let kappa = problem.kappa();
    let k2 = kappa * kappa;
    for t in 0..mesh.num_triangles() {
        let tri = mesh.triangles()[t];
        let det = mesh.dets()[t];
        let g = &mesh.grads()[t];
        let vals = [u.value(tri[0]), u.value(tri[1]), u.value(tri[2])];
        let eq = element_quad(mesh, problem.quad(), problem.potential(), t);
        let mut rr = [[0.0; 3]; 3];
        let mut ii = [[0.0; 3]; 3];
        let mut ir = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                let stiff = 0.5 * det * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                rr[a][b] += stiff;
                ii[a][b] += stiff;
            }
        }
        for q in 0..eq.wdet.len() {
            let wd = eq.wdet[q];
            let lam = eq.lam[q];
            let av = eq.a[q];
            let uq = lam[0] * vals[0] + lam[1] * vals[1] + lam[2] * vals[2];
            let (ur, ui) = (uq.re, uq.im);
            let w_rr = k2 * (eq.a2[q] - 1.0 + 3.0 * ur * ur + ui * ui);
            let w_ii = k2 * (eq.a2[q] - 1.0 + ur * ur + 3.0 * ui * ui);
            let w_x = 2.0 * k2 * ur * ui;
            let adotg: [f64; 3] =
                [av[0] * g[0][0] + av[1] * g[0][1], av[0] * g[1][0] + av[1] * g[1][1], av[0] * g[2][0] + av[1] * g[2][1]];
            for a in 0..3 {
                for b in 0..3 {
                    let m_ab = lam[a] * lam[b];
                    rr[a][b] += wd * w_rr * m_ab;
                    ii[a][b] += wd * w_ii * m_ab;
                    ir[a][b] += wd * (kappa * (lam[a] * adotg[b] - lam[b] * adotg[a]) + w_x * m_ab);
                }
            }
        }
        for a in 0..3 {
            for b in 0..3 {
                let slot = pattern
                    .find(tri[a], tri[b])
                    .expect("element nodes are pattern neighbors");
                op.rr[slot] += rr[a][b];
                op.ii[slot] += ii[a][b];
                op.ir[slot] += ir[a][b];
                let slot_t = pattern
                    .find(tri[b], tri[a])
                    .expect("element nodes are pattern neighbors");
                op.ri[slot_t] += ir[a][b];
            }
        }
    }
    op
}

/// Block-diagonal mass operator (RR = II = M, no coupling), the right-hand-side
/// and inner-product operator of the flow and eigenvalue problems.
pub fn mass_block(mesh: &Mesh2D) -> BlockOperator {
    let m = mass_matrix(mesh);
    let mut op = BlockOperator::zeros(&m.pattern);
    op.rr.copy_from_slice(&m.vals);
    op.ii.copy_from_slice(&m.vals);
    op
}

/// Stacked coefficients of `i u` (rotate every nodal value by a quarter turn).
pub fn i_times_coeffs(u: &ComplexField) -> Vec<f64> {
    let n = u.mesh().num_nodes();
    let mut out = vec![0.0; 2 * n];
    for k in 0..n {
        out[k] = -u.im()[k];
        out[n + k] = u.re()[k];
    }
    out
}
