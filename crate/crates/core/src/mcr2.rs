//! Maximal coding rate reduction.
//!
//! For representations `Z ∈ ℝ^{d×M}` with class labels:
//!
//! ```text
//! R   = ½ ln det(I + α ZZᵀ),                    α   = d / (M ε²)
//! R^c = Σ_k (m_k / M) · ½ ln det(I + α_k Z_k Z_kᵀ), α_k = d / (m_k ε²)
//! f   = R^c − R   (minimized; ΔR = −f)
//! ```
//!
//! Gradients with respect to `Z`:
//!
//! ```text
//! ∂R/∂Z          = α (I + α ZZᵀ)⁻¹ Z
//! ∂R^c/∂z_j      = (m_k / M) α_k (I + α_k Z_k Z_kᵀ)⁻¹ z_j    for j in class k
//! ```
//!
//! Classes absent from a batch contribute nothing. All logarithms are natural.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{logdet_shifted_gram, shifted_gram_solve, Matrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Mcr2Error {
    #[error("coding precision must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("batch has no samples")]
    EmptyBatch,
    #[error("{labels} labels for {columns} columns")]
    LengthMismatch { labels: usize, columns: usize },
    #[error("label {label} at column {column} is outside [0, {classes})")]
    LabelOutOfRange {
        label: usize,
        column: usize,
        classes: usize,
    },
    #[error("representation matrix has non-finite entries")]
    NonFinite,
    #[error("column {column} has norm {norm}, expected unit norm")]
    OffSphere { column: usize, norm: f64 },
}

/// Tolerance on column norms when the unit-sphere constraint is checked.
pub const SPHERE_TOL: f64 = 1e-8;

/// Embeddings (one column per sample) with their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationBatch {
    z: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
}

impl RepresentationBatch {
    pub fn new(z: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self, Mcr2Error> {
        if z.cols() == 0 || z.rows() == 0 {
            return Err(Mcr2Error::EmptyBatch);
        }
        if labels.len() != z.cols() {
            return Err(Mcr2Error::LengthMismatch {
                labels: labels.len(),
                columns: z.cols(),
            });
        }
        if let Some((column, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Mcr2Error::LabelOutOfRange {
                label,
                column,
                classes: num_classes,
            });
        }
        if !z.is_finite() {
            return Err(Mcr2Error::NonFinite);
        }
        Ok(Self {
            z,
            labels,
            num_classes,
        })
    }

    /// Like [`RepresentationBatch::new`] but also requires unit-norm columns.
    pub fn on_sphere(z: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self, Mcr2Error> {
        let batch = Self::new(z, labels, num_classes)?;
        batch.check_unit_sphere()?;
        Ok(batch)
    }

    pub fn check_unit_sphere(&self) -> Result<(), Mcr2Error> {
        for (column, norm) in self.z.column_norms().into_iter().enumerate() {
            if (norm - 1.0).abs() > SPHERE_TOL {
                return Err(Mcr2Error::OffSphere { column, norm });
            }
        }
        Ok(())
    }

    pub fn z(&self) -> &Matrix {
        &self.z
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Embedding dimension `d`.
    pub fn dim(&self) -> usize {
        self.z.rows()
    }

    /// Sample count `M`.
    pub fn len(&self) -> usize {
        self.z.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.z.cols() == 0
    }

    /// Column indices of each class, ascending; `tr(Π_k)` is the length.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for (j, &l) in self.labels.iter().enumerate() {
            out[l].push(j);
        }
        out
    }

    pub fn with_z(&self, z: Matrix) -> Result<Self, Mcr2Error> {
        Self::new(z, self.labels.clone(), self.num_classes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mcr2Params {
    epsilon: f64,
}

impl Mcr2Params {
    pub fn new(epsilon: f64) -> Result<Self, Mcr2Error> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Mcr2Error::InvalidEpsilon(epsilon));
        }
        Ok(Self { epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `d / (m ε²)`.
    pub fn alpha(&self, dim: usize, samples: usize) -> f64 {
        dim as f64 / (samples as f64 * self.epsilon * self.epsilon)
    }
}

/// Objective value with both rate terms, for logging.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mcr2Value {
    /// `R^c − R`.
    pub f: f64,
    pub rate: f64,
    pub class_rate: f64,
}

impl Mcr2Value {
    /// Rate reduction `ΔR = R − R^c = −f`.
    pub fn rate_reduction(&self) -> f64 {
        -self.f
    }
}

fn half_logdet(z: &Matrix, alpha: f64) -> f64 {
    0.5 * logdet_shifted_gram(z, alpha).expect("I + αZZᵀ is positive definite for finite Z")
}

fn rate_direction(z: &Matrix, alpha: f64) -> Matrix {
    let mut g = shifted_gram_solve(z, alpha).expect("I + αZZᵀ is positive definite for finite Z");
    g.scale_in_place(alpha);
    g
}

pub fn coding_rate(batch: &RepresentationBatch, params: &Mcr2Params) -> f64 {
    half_logdet(&batch.z, params.alpha(batch.dim(), batch.len()))
}

pub fn per_class_coding_rate(batch: &RepresentationBatch, params: &Mcr2Params) -> f64 {
    let m = batch.len() as f64;
    batch
        .class_indices()
        .iter()
        .filter(|idx| !idx.is_empty())
        .map(|idx| {
            let zk = batch.z.select_columns(idx);
            let weight = idx.len() as f64 / m;
            weight * half_logdet(&zk, params.alpha(batch.dim(), idx.len()))
        })
        .sum()
}

pub fn mcr2_objective(batch: &RepresentationBatch, params: &Mcr2Params) -> Mcr2Value {
    let rate = coding_rate(batch, params);
    let class_rate = per_class_coding_rate(batch, params);
    Mcr2Value {
        f: class_rate - rate,
        rate,
        class_rate,
    }
}

/// `∂R/∂Z` and `∂R^c/∂Z` separately.
pub fn grad_parts(batch: &RepresentationBatch, params: &Mcr2Params) -> (Matrix, Matrix) {
    let d = batch.dim();
    let m = batch.len();
    let grad_rate = rate_direction(&batch.z, params.alpha(d, m));

    let mut grad_class = Matrix::zeros(d, m);
    for idx in batch.class_indices().iter().filter(|idx| !idx.is_empty()) {
        let zk = batch.z.select_columns(idx);
        let weight = idx.len() as f64 / m as f64;
        let gk = rate_direction(&zk, params.alpha(d, idx.len()));
        for (local, &j) in idx.iter().enumerate() {
            for i in 0..d {
                grad_class[(i, j)] = weight * gk[(i, local)];
            }
        }
    }
    (grad_rate, grad_class)
}

/// `∂f/∂Z` with `f = R^c − R`.
pub fn grad_mcr2(batch: &RepresentationBatch, params: &Mcr2Params) -> Matrix {
    let (grad_rate, grad_class) = grad_parts(batch, params);
    grad_class.sub(&grad_rate)
}

/// Objective and gradient in one pass.
pub fn value_and_grad(batch: &RepresentationBatch, params: &Mcr2Params) -> (Mcr2Value, Matrix) {
    (mcr2_objective(batch, params), grad_mcr2(batch, params))
}

/// Outcome of checking the subspace-geometry hypotheses: an embedding large
/// enough for every class (`d ≥ Σ d_k`) and a fine enough precision
/// (`ε⁴ < min_k m_k d² / (M d_k²)`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Report {
    pub holds: bool,
    pub dimension_ok: bool,
    pub precision_ok: bool,
    pub dimension_budget: usize,
    pub embed_dim: usize,
    pub epsilon_pow4: f64,
    /// `min_k m_k d² / (M d_k²)`, the bound used for the verdict.
    pub precision_bound: f64,
    /// `min_{k,j} m_k d² / (M d_j²)`, the strictest reading of the bound.
    pub precision_bound_worst: f64,
    /// `precision_bound − ε⁴`; positive when the precision condition holds.
    pub precision_margin: f64,
    pub precision_ok_worst: bool,
}

pub fn check_theorem1_conditions(
    embed_dim: usize,
    per_class_dims: &[usize],
    class_sizes: &[usize],
    epsilon: f64,
) -> Theorem1Report {
    assert_eq!(
        per_class_dims.len(),
        class_sizes.len(),
        "per-class dims and sizes must have the same length"
    );
    let budget: usize = per_class_dims.iter().sum();
    let total: usize = class_sizes.iter().sum();
    let d2 = (embed_dim as f64).powi(2);
    let bound = |size: usize, dk: usize| size as f64 * d2 / (total as f64 * (dk as f64).powi(2));

    let precision_bound = per_class_dims
        .iter()
        .zip(class_sizes)
        .map(|(&dk, &mk)| bound(mk, dk))
        .fold(f64::INFINITY, f64::min);
    let max_dim = per_class_dims.iter().copied().max().unwrap_or(1);
    let min_size = class_sizes.iter().copied().min().unwrap_or(0);
    let precision_bound_worst = bound(min_size, max_dim);

    let eps4 = epsilon.powi(4);
    let dimension_ok = embed_dim >= budget;
    let precision_ok = eps4 < precision_bound;
    Theorem1Report {
        holds: dimension_ok && precision_ok,
        dimension_ok,
        precision_ok,
        dimension_budget: budget,
        embed_dim,
        epsilon_pow4: eps4,
        precision_bound,
        precision_bound_worst,
        precision_margin: precision_bound - eps4,
        precision_ok_worst: eps4 < precision_bound_worst,
    }
}
