//! Finite element minimization of the two-dimensional Ginzburg-Landau energy on the
//! unit square with a prescribed magnetic vector potential.
//!
//! The crate provides the full pipeline: nested structured meshes ([`mesh`]), complex
//! P1 fields with exact inter-grid transfer ([`field`]), assembly of the energy, its
//! gradient, and its real block Hessian ([`assembly`]), minimization by a linearized
//! implicit gradient flow with gauge-fixed Newton refinement ([`minimize`]), spectral
//! certification of local uniqueness up to phase ([`eigen`]), mesh-refinement
//! convergence studies against a fine reference ([`study`]), and a two-grid localized
//! orthogonal decomposition space with superapproximation rates ([`lod`]).
//!
//! All solvers are deterministic: identical inputs reproduce identical bits.

pub mod assembly;
pub mod dense;
pub mod eigen;
pub mod field;
pub mod linalg;
pub mod lod;
pub mod mesh;
pub mod minimize;
pub mod study;




pub use assembly::{BlockOperator, Potential, Problem};
pub use eigen::{smallest_eigs, verify_local_uniqueness, EigenResult, UniquenessReport, Verdict};
pub use field::{ComplexField, NormReport};
pub use lod::{build_lod_basis, lod_ritz_project, minimize_lod, LodBasis, LodProjection};
pub use mesh::{quadrature, Mesh2D, QuadratureRule};
pub use minimize::{minimize, MinimizeReport, SolverConfig, Tau};
pub use study::{ConvergenceRecord, ReferenceSolution};



/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A precondition on user input was violated (mesh size, quadrature degree,
    /// non-nested meshes, negative kappa, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// A computation produced or received a non-finite value.
    #[error("non-finite value: {0}")]
    NonFinite(String),
    /// Phase alignment is undefined: the complex L2 inner product of the two
    /// fields vanishes, so every global phase is equally (un)suitable.
    #[error("phase alignment undefined: fields are L2-orthogonal in the complex sense")]
    AlignmentUndefined,
    /// A linear solve or factorization failed; the message carries context
    /// (which system, iteration counts, residuals).
    #[error("linear solver failure: {0}")]
    Solver(String),
    /// The eigenvalue iteration failed to converge or lost its factorization.
    #[error("eigensolver failure: {0}")]
    Eigen(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    /// A field file or configuration fragment could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
