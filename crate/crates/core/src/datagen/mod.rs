//! Datasets and their split across clients.

mod csv;
mod partition;
mod synthetic;

pub use self::csv::{load_csv, write_csv};
pub use partition::{dirichlet_partition, PartitionPlan, MAX_PARTITION_ATTEMPTS};
pub use synthetic::{gen_union_of_subspaces, SyntheticSpec};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Matrix;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{classes} classes of dimension {per_class_dim} do not fit in ambient dimension {ambient_dim}")]
    Dimension {
        classes: usize,
        per_class_dim: usize,
        ambient_dim: usize,
    },
    #[error("invalid dataset parameters: {0}")]
    InvalidSpec(String),
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: line {line} has {found} features, expected {expected}")]
    InconsistentWidth {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("{path}: no data rows")]
    Empty { path: PathBuf },
    #[error("invalid partition request: {0}")]
    InvalidPartition(String),
    #[error(
        "no partition with at least {min_per_client} samples per client after {attempts} attempts"
    )]
    InfeasiblePartition {
        min_per_client: usize,
        attempts: usize,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Synthetic,
    Csv { path: PathBuf },
}

/// Samples as the columns of `x` (`D × M`) with dense labels in `[0, K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
    provenance: Provenance,
}

impl Dataset {
    pub fn new(
        x: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
        provenance: Provenance,
    ) -> Result<Self, DataError> {
        if labels.len() != x.cols() {
            return Err(DataError::InvalidSpec(format!(
                "{} labels for {} samples",
                labels.len(),
                x.cols()
            )));
        }
        let mut seen = vec![false; num_classes];
        for &l in &labels {
            if l >= num_classes {
                return Err(DataError::InvalidSpec(format!(
                    "label {l} outside [0, {num_classes})"
                )));
            }
            seen[l] = true;
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(DataError::InvalidSpec(format!("class {k} has no samples")));
        }
        Ok(Self {
            x,
            labels,
            num_classes,
            provenance,
        })
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Input dimension `D`.
    pub fn input_dim(&self) -> usize {
        self.x.rows()
    }

    pub fn len(&self) -> usize {
        self.x.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.cols() == 0
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Samples at `indices`, with their labels.
    pub fn subset(&self, indices: &[usize]) -> (Matrix, Vec<usize>) {
        let x = self.x.select_columns(indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (x, labels)
    }
}
