//! Backbone checkpoints: the flat parameter vector as a `1 × P` FLOWMAT1
//! matrix plus a JSON shape manifest next to it.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::backbone::{BackboneError, BackboneParams, ParamVector, ShapeManifest};
use crate::tensor::io::{load_flowmat, save_flowmat, DumpError};
use crate::tensor::Matrix;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Dump {
        path: PathBuf,
        #[source]
        source: DumpError,
    },
    #[error("{path}: bad shape manifest: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("checkpoint does not match its manifest: {0}")]
    Shape(#[from] BackboneError),
}

/// Path of the shape manifest that accompanies `params_path`.
pub fn manifest_path(params_path: &Path) -> PathBuf {
    params_path.with_extension("json")
}

pub fn save_checkpoint(params: &BackboneParams, path: &Path) -> Result<(), CheckpointError> {
    let flat = params.flatten();
    let row = Matrix::from_vec(1, flat.len(), flat.as_slice().to_vec())
        .expect("backbone parameters are finite");
    save_flowmat(path, &row).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let manifest = manifest_path(path);
    let body = serde_json::to_string_pretty(flat.shape()).expect("shape serializes");
    fs::write(&manifest, body + "\n").map_err(|source| CheckpointError::Io {
        path: manifest,
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<BackboneParams, CheckpointError> {
    let row = load_flowmat(path).map_err(|source| CheckpointError::Dump {
        path: path.to_path_buf(),
        source,
    })?;
    let manifest = manifest_path(path);
    let text = fs::read_to_string(&manifest).map_err(|source| CheckpointError::Io {
        path: manifest.clone(),
        source,
    })?;
    let shape: ShapeManifest =
        serde_json::from_str(&text).map_err(|e| CheckpointError::Manifest {
            path: manifest,
            message: e.to_string(),
        })?;
    let flat = ParamVector::new(row.into_vec(), shape)?;
    Ok(BackboneParams::from_flat(&flat)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let shape = ShapeManifest::mlp(5, &[7, 3], 4);
        let p = BackboneParams::init(&shape, &mut Rng::new(3)).unwrap();
        let path = dir.path().join("ckpt.flowmat");
        save_checkpoint(&p, &path).unwrap();
        assert!(manifest_path(&path).exists());
        assert_eq!(load_checkpoint(&path).unwrap(), p);
    }

    #[test]
    fn mismatched_manifest_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = BackboneParams::init(&ShapeManifest::mlp(2, &[], 2), &mut Rng::new(0)).unwrap();
        let path = dir.path().join("ckpt.flowmat");
        save_checkpoint(&p, &path).unwrap();
        let other = ShapeManifest::mlp(3, &[], 2);
        fs::write(manifest_path(&path), serde_json::to_string(&other).unwrap()).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::Shape(_))
        ));
    }
}
