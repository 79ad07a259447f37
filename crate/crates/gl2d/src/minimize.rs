//! Energy minimization: a linearized implicit gradient flow carries an
//! arbitrary starting field into the attraction basin, then a gauge-fixed
//! Newton iteration polishes the critical point to solver precision.
//!
//! Both phases stop on scaled energy differences `kappa^{-2} |E_{n+1} - E_n|`
//! (unscaled when kappa = 0). The flow step solves one complex Hermitian
//! positive definite banded system per iteration by direct factorization; the
//! Newton step solves the real symmetric Hessian system with a single bordering
//! row that pins the phase direction, which the Hessian annihilates.

use std::sync::Arc;

use num_complex::Complex64;

use crate::assembly::{self, BlockOperator, MagneticParts, Problem};
use crate::field::ComplexField;
use crate::linalg::{self, BandedCholC, BandedLdl, ComplexCsr, CsrPattern, ScalarCsr};
use crate::mesh::Mesh2D;
use crate::{Error, Result};

/// Gradient flow step size. `Auto` resolves to `kappa^{-2}`, the scaling under
/// which the flow's iteration count stays bounded as kappa grows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tau {
    Auto,
    Fixed(f64),
}

impl Tau {
    /// Concrete step size; `Auto` falls back to 1 when kappa = 0.
    pub fn resolve(&self, kappa: f64) -> f64 {
        match *self {
            Tau::Auto => {
                if kappa > 0.0 {
                    kappa.powi(-2)
                } else {
                    1.0
                }
            }
            Tau::Fixed(t) => t,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    pub tau: Tau,
    /// Scaled energy-difference tolerance ending the flow phase.
    pub delta_gf: f64,
    /// Scaled energy-difference tolerance ending the Newton phase.
    pub delta_newton: f64,
    pub max_gf_iters: usize,
    pub max_newton_iters: usize,
    /// Relative residual demanded of every inner linear solve.
    pub linear_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tau: Tau::Auto,
            delta_gf: 1e-9,
            delta_newton: 1e-12,
            max_gf_iters: 50_000,
            max_newton_iters: 50,
            linear_tol: 1e-12,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if let Tau::Fixed(t) = self.tau {
            if !t.is_finite() || t <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "tau must be positive and finite, got {t}"
                )));
            }
        }
        for (name, v) in [
            ("delta_gf", self.delta_gf),
            ("delta_newton", self.delta_newton),
            ("linear_tol", self.linear_tol),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MinimizeReport {
    pub field: ComplexField,
    /// Energy after every flow iteration, starting with the initial field.
    /// Length is always `gf_iters + 1`.
    pub energy_history: Vec<f64>,
    pub gf_iters: usize,
    pub newton_iters: usize,
    pub final_residual_norm: f64,
    pub converged: bool,
}

/// Constant matrices of the flow system, assembled once per mesh. Only the
/// `|u^n|^2` weighted mass changes between iterations.
struct FlowEngine<'p> {
    problem: &'p Problem,
    mesh: Arc<Mesh2D>,
    pattern: Arc<CsrPattern>,
    mass: ScalarCsr,
    magnetic: MagneticParts,
}

impl<'p> FlowEngine<'p> {
    fn new(problem: &'p Problem, mesh: &Arc<Mesh2D>) -> Self {
        let pattern = CsrPattern::from_mesh(mesh);
        let mass = assembly::mass_matrix_on(&pattern, mesh);
        let magnetic = assembly::assemble_magnetic_parts_on(&pattern, problem, mesh);
        FlowEngine { problem, mesh: Arc::clone(mesh), pattern, mass, magnetic }
    }

    /// One implicit step: solve
    /// `[(1 - tau kappa^2) M + tau (D - iC) + tau kappa^2 W(|u|^2)] u' = M u`.
    /// The matrix is Hermitian positive definite along the flow.
    fn step(&self, u: &ComplexField, tau: f64, linear_tol: f64) -> Result<ComplexField> {
        let kappa = self.problem.kappa();
        let k2 = kappa * kappa;
        let w = assembly::weighted_mass_on(&self.pattern, u, &self.mesh);
        let mut s = ComplexCsr::zeros(&self.pattern);
        let m0 = 1.0 - tau * k2;
        for k in 0..s.vals.len() {
            let re = m0 * self.mass.vals[k]
                + tau * self.magnetic.d.vals[k]
                + tau * k2 * w.vals[k];
            s.vals[k] = Complex64::new(re, -tau * self.magnetic.c.vals[k]);
        }
        let uc = u.to_complex();
        let mut b = vec![Complex64::new(0.0, 0.0); uc.len()];
        self.mass.matvec_complex(&uc, &mut b);
        let bnorm = linalg::l2_norm_c(&b);
        if bnorm == 0.0 {
            // M u = 0 only for u = 0, which the flow keeps at zero.
            return Ok(ComplexField::zero(&self.mesh));
        }
        let factor = BandedCholC::factor(&s)
            .map_err(|e| Error::Solver(format!("gradient flow system: {e}")))?;
        let mut x = factor.solve(&b);
        let mut r = vec![Complex64::new(0.0, 0.0); b.len()];
        for attempt in 0..3 {
            s.matvec(&x, &mut r);
            for (rk, bk) in r.iter_mut().zip(&b) {
                *rk = bk - *rk;
            }
            let rel = linalg::l2_norm_c(&r) / bnorm;
            if rel <= linear_tol {
                return ComplexField::from_complex(&self.mesh, &x);
            }
            if attempt == 2 {
                // Fully refined: the residual is at the attainable f64 floor,
                // which on large bandwidths can sit just above the target.
                // Within a decade it is accepted; the flow's energy stopping
                // test governs overall accuracy.
                if rel <= 10.0 * linear_tol {
                    return ComplexField::from_complex(&self.mesh, &x);
                }
                return Err(Error::Solver(format!(
                    "gradient flow step stalled at relative residual {rel:.3e} \
                     (target {linear_tol:.1e})"
                )));
            }
            let e = factor.solve(&r);
            for (xk, ek) in x.iter_mut().zip(&e) {
                *xk += ek;
            }
        }
        unreachable!()
    }
}

/// One implicit gradient flow step with a freshly assembled system. Loops
/// should build the engine once through [`minimize`] instead.
pub fn gradient_flow_step(u: &ComplexField, problem: &Problem, tau: f64) -> Result<ComplexField> {
    if !tau.is_finite() || tau <= 0.0 {
        return Err(Error::InvalidInput(format!("tau must be positive and finite, got {tau}")));
    }
    FlowEngine::new(problem, u.mesh()).step(u, tau, 1e-12)
}

/// One gauge-fixed Newton step: solves the bordered symmetric system
///
/// ```text
/// [ H(u)  g ] [delta]   [-residual(u)]
/// [ g^T   0 ] [ mu  ] = [      0     ]
/// ```
///
/// with `g = M_block (coefficients of iu)`, then returns `u + delta`. The
/// constraint row removes the global-phase null direction of the Hessian.
pub fn newton_step(u: &ComplexField, problem: &Problem) -> Result<ComplexField> {
    newton_step_with_tol(u, problem, 1e-12)
}

pub fn newton_step_with_tol(
    u: &ComplexField,
    problem: &Problem,
    linear_tol: f64,
) -> Result<ComplexField> {
    let mesh = u.mesh();
    let n = mesh.num_nodes();
    let r_stacked = assembly::residual(u, problem);
    let res_norm = linalg::l2_norm(&r_stacked);
    if res_norm == 0.0 {
        return Ok(u.clone());
    }
    let h = assembly::hessian(u, problem);
    let mass = assembly::mass_matrix_on(&h.pattern, mesh);

    // g interleaved: the mass matrix applied to the coefficients of i u.
    let mut g = vec![0.0; 2 * n];
    let mut tmp = vec![0.0; n];
    mass.matvec(u.im(), &mut tmp);
    for k in 0..n {
        g[2 * k] = -tmp[k];
    }
    mass.matvec(u.re(), &mut tmp);
    for k in 0..n {
        g[2 * k + 1] = tmp[k];
    }

    let mut rhs = vec![0.0; 2 * n];
    for k in 0..n {
        rhs[2 * k] = -r_stacked[k];
        rhs[2 * k + 1] = -r_stacked[n + k];
    }

    let bw = h.interleaved_bandwidth();
    let ldl = BandedLdl::factor_from_band(2 * n, bw, |band| h.fill_interleaved_band(band), false)
        .map_err(|e| Error::Solver(format!("hessian factorization: {e}")))?;
    let (delta_i, mu) =
        linalg::solve_bordered(&ldl, &g, &rhs, |x| h.apply_interleaved(x), 2)?;

    // Residual check on the augmented system.
    let hd = h.apply_interleaved(&delta_i);
    let mut aug_res = 0.0;
    for k in 0..2 * n {
        let rk = rhs[k] - hd[k] - mu * g[k];
        aug_res += rk * rk;
    }
    let aug_res = aug_res.sqrt();
    if aug_res > linear_tol.max(1e-13) * res_norm * 10.0 {
        return Err(Error::Solver(format!(
            "newton system solved to {aug_res:.3e} against rhs norm {res_norm:.3e}, \
             exceeds linear_tol {linear_tol:.1e}"
        )));
    }

    let delta = linalg::interleaved_to_stacked(&delta_i);
    let mut next = u.to_stacked();
    for (a, b) in next.iter_mut().zip(&delta) {
        *a += b;
    }
    let next = ComplexField::from_stacked(mesh, &next)?;
    let new_norm = linalg::l2_norm(&assembly::residual(&next, problem));
    if new_norm > 10.0 * res_norm {
        return Err(Error::Solver(format!(
            "newton step diverged: residual grew {res_norm:.3e} -> {new_norm:.3e}"
        )));
    }
    Ok(next)
}

/// Direct symmetric solve `op x = rhs` on stacked coefficients, refined until
/// the relative residual is at most `linear_tol` (the attainable refinement
/// floor is accepted when it lands within a decade of that). Handles positive
/// definite, semidefinite with compatible right-hand side, and mildly
/// indefinite systems.
pub fn linear_solve(op: &BlockOperator, rhs: &[f64], linear_tol: f64) -> Result<Vec<f64>> {
    let dim = op.dim();
    assert_eq!(rhs.len(), dim);
    let b = linalg::stacked_to_interleaved(rhs);
    let bnorm = linalg::l2_norm(&b);
    if bnorm == 0.0 {
        return Ok(vec![0.0; dim]);
    }
    let bw = op.interleaved_bandwidth();
    let ldl = BandedLdl::factor_from_band(dim, bw, |band| op.fill_interleaved_band(band), false)?;
    let mut x = ldl.solve(&b);
    for attempt in 0..4 {
        let ax = op.apply_interleaved(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bk, ak)| bk - ak).collect();
        let rel = linalg::l2_norm(&r) / bnorm;
        if rel <= linear_tol {
            return Ok(linalg::interleaved_to_stacked(&x));
        }
        if attempt == 3 {
            // Same floor acceptance as the flow step; Newton validates every
            // step again through the augmented residual, so a floor-limited
            // solve cannot slip through as a bad step.
            if rel <= 10.0 * linear_tol {
                return Ok(linalg::interleaved_to_stacked(&x));
            }
            return Err(Error::Solver(format!(
                "symmetric solve stalled at relative residual {rel:.3e} \
                 (target {linear_tol:.1e}, {} perturbed pivots)",
                ldl.perturbed_pivots
            )));
        }
        let e = ldl.solve(&r);
        for (xk, ek) in x.iter_mut().zip(&e) {
            *xk += ek;
        }
    }
    unreachable!()
}

/// Full minimization: gradient flow until the scaled energy difference drops
/// below `delta_gf`, then Newton until it drops below `delta_newton`. At
/// kappa = 0 the energy differences are unscaled and the Newton phase is
/// skipped (the functional is quadratic and the flow solves it directly).
pub fn minimize(
    initial: &ComplexField,
    problem: &Problem,
    config: &SolverConfig,
) -> Result<MinimizeReport> {
    config.validate()?;
    if !initial.is_finite() {
        return Err(Error::NonFinite("initial field".into()));
    }
    let kappa = problem.kappa();
    let tau = config.tau.resolve(kappa);
    let scale = if kappa > 0.0 { kappa.powi(-2) } else { 1.0 };
    let engine = FlowEngine::new(problem, initial.mesh());

    let mut u = initial.clone();
    let mut energy_history = vec![assembly::energy(&u, problem)];
    let mut gf_converged = false;
    while energy_history.len() - 1 < config.max_gf_iters {
        let next = engine.step(&u, tau, config.linear_tol)?;
        let e = assembly::energy(&next, problem);
        if !e.is_finite() {
            return Err(Error::NonFinite(format!(
                "energy after flow iteration {}",
                energy_history.len()
            )));
        }
        let prev = *energy_history.last().unwrap();
        let it = energy_history.len();
        if it > 3 && e > prev + 1e-12 * prev.abs().max(1.0) {
            eprintln!("warning: flow energy increased at iteration {it}: {prev:.12e} -> {e:.12e}");
        }
        energy_history.push(e);
        u = next;
        if scale * (e - prev).abs() < config.delta_gf {
            gf_converged = true;
            break;
        }
    }
    let gf_iters = energy_history.len() - 1;

    let mut newton_iters = 0;
    let mut newton_converged = kappa == 0.0;
    if gf_converged && kappa > 0.0 {
        let mut e_prev = *energy_history.last().unwrap();
        while newton_iters < config.max_newton_iters {
            let next = newton_step_with_tol(&u, problem, config.linear_tol)?;
            let e = assembly::energy(&next, problem);
            newton_iters += 1;
            u = next;
            let done = scale * (e - e_prev).abs() < config.delta_newton;
            e_prev = e;
            if done {
                newton_converged = true;
                break;
            }
        }
    }

    let final_residual_norm = linalg::l2_norm(&assembly::residual(&u, problem));
    Ok(MinimizeReport {
        field: u,
        energy_history,
        gf_iters,
        newton_iters,
        final_residual_norm,
        converged: gf_converged && newton_converged,
    })
}
