//! Feature extractor `ℝ^D → S^{d-1}` and the per-client downstream head.

mod head;
mod network;
mod params;
mod subspace;

pub use head::{accuracy, head_loss, train_head, HeadParams};
pub use network::{backward, forward, sphere_projection_jacobian, Tape, DEGENERATE_NORM};
pub use params::{Activation, BackboneParams, Layer, LayerShape, ParamVector, ShapeManifest};
pub use subspace::{nearest_subspace_classify, SubspaceClassifier, SUBSPACE_RANK_TOL};

use thiserror::Error;

use crate::tensor::LinalgError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackboneError {
    #[error("invalid backbone shape: {0}")]
    InvalidShape(String),
    #[error("parameter count mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("non-finite parameter")]
    NonFinite,
    #[error("embedding column {column} has a non-finite norm")]
    NonFiniteOutput { column: usize },
    #[error("input has {found} rows, backbone expects {expected}")]
    InputDim { expected: usize, found: usize },
    #[error("upstream gradient is {found:?}, expected {expected:?}")]
    GradientShape {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("tape does not match the parameters")]
    TapeMismatch,
    #[error("class {0} has no training samples")]
    EmptyTrainingClass(usize),
    #[error(transparent)]
    Linalg(LinalgError),
}
