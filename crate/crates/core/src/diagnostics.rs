//! Geometry of learned representations: class-sorted cosine similarities,
//! inter/intra-class orthogonality, and per-class singular-value spectra.

use std::fs;
use std::io;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::io::{format_f64, save_flowmat, save_matrix_csv};
use crate::tensor::{dot, sym_eig, LinalgError, Matrix, Rng};

/// Singular values below this fraction of the largest do not count toward
/// the effective rank.
pub const EFFECTIVE_RANK_TOL: f64 = 1e-6;

/// Default column cap for similarity matrices.
pub const DEFAULT_SIMILARITY_CAP: usize = 2000;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("column {0} has zero norm")]
    ZeroNormColumn(usize),
    #[error("{labels} labels for {columns} columns")]
    LengthMismatch { labels: usize, columns: usize },
    #[error("class {0} has no samples")]
    EmptyClass(usize),
    #[error("label {label} is outside [0, {classes})")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Cosine similarities with rows and columns sorted by class.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    matrix: Matrix,
    /// `order[i]` is the original column shown at position `i`.
    order: Vec<usize>,
    /// Label of each position, non-decreasing.
    labels: Vec<usize>,
}

impl SimilarityMatrix {
    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Writes the matrix as FLOWMAT1 and CSV, and the ordering as JSON.
    pub fn save(&self, flowmat: &Path, csv: &Path, order_json: &Path) -> io::Result<()> {
        save_flowmat(flowmat, &self.matrix)?;
        save_matrix_csv(csv, &self.matrix)?;
        let record = OrderRecord {
            order: self.order.clone(),
            labels: self.labels.clone(),
        };
        fs::write(order_json, serde_json::to_string(&record)? + "\n")
    }
}

#[derive(Serialize, Deserialize)]
struct OrderRecord {
    order: Vec<usize>,
    labels: Vec<usize>,
}

fn check_labels(z: &Matrix, labels: &[usize]) -> Result<(), DiagnosticsError> {
    if labels.len() != z.cols() {
        return Err(DiagnosticsError::LengthMismatch {
            labels: labels.len(),
            columns: z.cols(),
        });
    }
    Ok(())
}

/// `ẑ_iᵀ ẑ_j` over all pairs, columns stably sorted by label. Only the upper
/// triangle is computed, so the result is exactly symmetric.
pub fn cosine_matrix(z: &Matrix, labels: &[usize]) -> Result<SimilarityMatrix, DiagnosticsError> {
    check_labels(z, labels)?;
    let mut order: Vec<usize> = (0..z.cols()).collect();
    order.sort_by_key(|&j| labels[j]);

    let unit: Vec<Vec<f64>> = order
        .iter()
        .map(|&j| {
            let c = z.column(j);
            let n = dot(&c, &c).sqrt();
            if n == 0.0 {
                Err(DiagnosticsError::ZeroNormColumn(j))
            } else {
                Ok(c.into_iter().map(|v| v / n).collect())
            }
        })
        .collect::<Result<_, _>>()?;

    let m = order.len();
    let mut matrix = Matrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v = dot(&unit[i], &unit[j]);
            matrix[(i, j)] = v;
            matrix[(j, i)] = v;
        }
    }
    let sorted_labels = order.iter().map(|&j| labels[j]).collect();
    Ok(SimilarityMatrix {
        matrix,
        order,
        labels: sorted_labels,
    })
}

/// [`cosine_matrix`] on at most `cap` columns drawn with `seed`.
pub fn cosine_matrix_capped(
    z: &Matrix,
    labels: &[usize],
    cap: usize,
    seed: u64,
) -> Result<SimilarityMatrix, DiagnosticsError> {
    check_labels(z, labels)?;
    if z.cols() <= cap {
        return cosine_matrix(z, labels);
    }
    let keep = Rng::new(seed).sample_indices(z.cols(), cap);
    let sub_labels: Vec<usize> = keep.iter().map(|&j| labels[j]).collect();
    let mut sim = cosine_matrix(&z.select_columns(&keep), &sub_labels)?;
    sim.order = sim.order.iter().map(|&i| keep[i]).collect();
    Ok(sim)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalityScore {
    /// Mean `|cos|` over pairs from different classes.
    pub inter: f64,
    /// Mean `|cos|` over distinct pairs from the same class.
    pub intra: f64,
}

/// Mean absolute cosine between and within classes, diagonal excluded. A
/// side with no pairs scores 0.
pub fn orthogonality_score(sim: &SimilarityMatrix) -> OrthogonalityScore {
    let m = sim.len();
    let (mut inter, mut n_inter, mut intra, mut n_intra) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..m {
        for j in (i + 1)..m {
            let v = sim.matrix[(i, j)].abs();
            if sim.labels[i] == sim.labels[j] {
                intra += v;
                n_intra += 1;
            } else {
                inter += v;
                n_inter += 1;
            }
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    OrthogonalityScore {
        inter: mean(inter, n_inter),
        intra: mean(intra, n_intra),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpectrum {
    pub class: usize,
    pub size: usize,
    /// All `d` singular values of `Z_k`, descending.
    pub singular_values: Vec<f64>,
    pub effective_rank: usize,
    /// `min(|ℳ_k|, d)`: the largest rank `Z_k` can have.
    pub target_rank: usize,
    /// Set when `|ℳ_k| > d`, so full rank `|ℳ_k|` is out of reach.
    pub target_capped: bool,
    /// std/mean of the top `min(|ℳ_k| − 1, d − 1)` singular values; 0 when
    /// fewer than two values are compared.
    pub dispersion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub embed_dim: usize,
    pub classes: Vec<ClassSpectrum>,
}

impl SpectrumReport {
    /// Smallest `effective_rank / target_rank` over classes.
    pub fn min_rank_ratio(&self) -> f64 {
        self.classes
            .iter()
            .map(|c| c.effective_rank as f64 / c.target_rank as f64)
            .fold(f64::INFINITY, f64::min)
    }

    /// One `class,index,singular_value` row per value, with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,index,singular_value\n");
        for c in &self.classes {
            for (i, s) in c.singular_values.iter().enumerate() {
                out.push_str(&format!("{},{},{}\n", c.class, i, format_f64(*s)));
            }
        }
        out
    }

    pub fn save(&self, csv: &Path, json: &Path) -> io::Result<()> {
        fs::write(csv, self.to_csv())?;
        fs::write(json, serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Singular values of each class block `Z_k`, from the eigenvalues of
/// `Z_k Z_kᵀ`.
pub fn class_spectra(
    z: &Matrix,
    labels: &[usize],
    num_classes: usize,
) -> Result<SpectrumReport, DiagnosticsError> {
    check_labels(z, labels)?;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for &l in labels {
        if l >= num_classes {
            return Err(DiagnosticsError::LabelOutOfRange {
                label: l,
                classes: num_classes,
            });
        }
    }
    for (j, &l) in labels.iter().enumerate() {
        members[l].push(j);
    }
    if let Some(k) = members.iter().position(Vec::is_empty) {
        return Err(DiagnosticsError::EmptyClass(k));
    }

    let d = z.rows();
    let classes = members
        .par_iter()
        .enumerate()
        .map(|(class, idx)| {
            let zk = z.select_columns(idx);
            let eig = sym_eig(&zk.outer_gram())?;
            let singular_values: Vec<f64> = eig.values.iter().map(|&l| l.max(0.0).sqrt()).collect();
            let top = singular_values[0];
            let effective_rank = if top > 0.0 {
                singular_values
                    .iter()
                    .filter(|&&s| s >= EFFECTIVE_RANK_TOL * top)
                    .count()
            } else {
                0
            };
            let compared = (idx.len().saturating_sub(1)).min(d - 1);
            Ok(ClassSpectrum {
                class,
                size: idx.len(),
                dispersion: dispersion(&singular_values[..compared]),
                singular_values,
                effective_rank,
                target_rank: idx.len().min(d),
                target_capped: idx.len() > d,
            })
        })
        .collect::<Result<Vec<_>, DiagnosticsError>>()?;
    Ok(SpectrumReport {
        embed_dim: d,
        classes,
    })
}

fn dispersion(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return 0.0;
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() / mean
}
