//! Dense linear algebra used throughout the simulator.
//!
//! Everything here is `f64`, row-major and single-threaded. Matrices are
//! small (the embedding dimension rarely exceeds a few hundred), so the
//! algorithms favour robustness over speed: Cholesky for log-determinants
//! and SPD solves, cyclic Jacobi for symmetric eigenproblems.

mod cholesky;
mod eigen;
pub mod io;
mod matrix;
mod rng;

pub use cholesky::{cholesky, logdet_spd, solve_spd, SpdFactor};
pub use eigen::{sym_eig, SymEigen, MAX_JACOBI_SWEEPS};
pub use matrix::{dot, Matrix};
pub use rng::{derive_seed, Rng};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("matrix is not positive definite (pivot {pivot} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("Jacobi eigensolver did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
}

/// Symmetry tolerance accepted by the factorizations, relative to the
/// largest entry.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// `ln det(I + alpha · Z Zᵀ)`, evaluated in whichever Gram form is smaller.
///
/// When `Z` has fewer columns than rows the `M×M` form `I + alpha · ZᵀZ` is
/// used; both share the same nonzero spectrum.
pub fn logdet_shifted_gram(z: &Matrix, alpha: f64) -> Result<f64, LinalgError> {
    let gram = if z.cols() < z.rows() {
        z.inner_gram()
    } else {
        z.outer_gram()
    };
    Ok(logdet_spd(&cholesky(&gram.shifted_identity(alpha))?))
}

/// Same quantity through the `d×d` form regardless of shape.
pub fn logdet_shifted_gram_primal(z: &Matrix, alpha: f64) -> Result<f64, LinalgError> {
    Ok(logdet_spd(&cholesky(
        &z.outer_gram().shifted_identity(alpha),
    )?))
}

/// Same quantity through the `M×M` form regardless of shape.
pub fn logdet_shifted_gram_dual(z: &Matrix, alpha: f64) -> Result<f64, LinalgError> {
    Ok(logdet_spd(&cholesky(
        &z.inner_gram().shifted_identity(alpha),
    )?))
}

/// `(I + alpha · Z Zᵀ)⁻¹ Z`, via the push-through identity
/// `(I_d + αZZᵀ)⁻¹Z = Z(I_M + αZᵀZ)⁻¹` when `Z` is wide-short.
pub fn shifted_gram_solve(z: &Matrix, alpha: f64) -> Result<Matrix, LinalgError> {
    if z.cols() < z.rows() {
        let factor = cholesky(&z.inner_gram().shifted_identity(alpha))?;
        // (I + αZᵀZ) is symmetric so Z·A⁻¹ = (A⁻¹Zᵀ)ᵀ.
        Ok(solve_spd(&factor, &z.transpose())?.transpose())
    } else {
        let factor = cholesky(&z.outer_gram().shifted_identity(alpha))?;
        solve_spd(&factor, z)
    }
}
