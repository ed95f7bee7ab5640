//! Small dense linear algebra and frequency-response tools for the
//! control design: Lyapunov equations, eigenvalue extremes, Hurwitz tests
//! and stability margins of rational open loops.

mod eig;
mod freq;
mod lyapunov;
mod matrix;

pub use eig::{eigenvalues, is_hurwitz, sym_eig_extremes, sym_eigenvalues, HURWITZ_MARGIN, SYMMETRY_TOL};
pub use freq::{stability_margins, stability_margins_on, wrap_degrees, CrossoverGrid, Margins, RationalTransfer};
pub use lyapunov::{lyapunov_residual, solve_lyapunov};
pub use matrix::{solve_linear, Matrix};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix dimensions must be positive, got {rows}x{cols}")]
    InvalidDimension { rows: usize, cols: usize },
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("non-finite matrix entry")]
    NonFinite,
    #[error("matrix is not Hurwitz, eigenvalues {eigenvalues:?}")]
    NotHurwitz { eigenvalues: Vec<(f64, f64)> },
    #[error("linear system is numerically singular (pivot {pivot:e})")]
    SingularSystem { pivot: f64 },
    #[error("matrix is not symmetric (relative asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("QR iteration did not converge")]
    NoConvergence,
    #[error("|L(jω)| does not cross 1 on the search interval")]
    NoCrossover,
    #[error("invalid transfer function: {0}")]
    InvalidTransfer(&'static str),
}
