//! Run configuration: one file describes a whole experiment.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::ShapeManifest;
use crate::datagen::{gen_union_of_subspaces, load_csv, DataError, Dataset, SyntheticSpec};
use crate::diagnostics::DEFAULT_SIMILARITY_CAP;
use crate::federation::{FederationConfig, FederationError};
use crate::manifest::sha256_hex;
use crate::tensor::derive_seed;

/// Seed tags fanned out from the root seed.
pub mod tags {
    pub const DATA: &str = "data";
    pub const PARTITION: &str = "partition";
    pub const SIMILARITY: &str = "similarity";
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Federation(#[from] FederationError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 32],
            embed_dim: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic {
        #[serde(default = "defaults::classes")]
        classes: usize,
        #[serde(default = "defaults::per_class_dim")]
        per_class_dim: usize,
        #[serde(default = "defaults::samples_per_class")]
        samples_per_class: usize,
        #[serde(default = "defaults::ambient_dim")]
        ambient_dim: usize,
        #[serde(default = "defaults::noise_sigma")]
        noise_sigma: f64,
    },
    Csv {
        path: PathBuf,
    },
}

mod defaults {
    use crate::datagen::SyntheticSpec;

    pub fn classes() -> usize {
        SyntheticSpec::default().classes
    }
    pub fn per_class_dim() -> usize {
        SyntheticSpec::default().per_class_dim
    }
    pub fn samples_per_class() -> usize {
        SyntheticSpec::default().samples_per_class
    }
    pub fn ambient_dim() -> usize {
        SyntheticSpec::default().ambient_dim
    }
    pub fn noise_sigma() -> f64 {
        SyntheticSpec::default().noise_sigma
    }
}

impl Default for DatasetConfig {
    fn default() -> Self {
        let s = SyntheticSpec::default();
        Self::Synthetic {
            classes: s.classes,
            per_class_dim: s.per_class_dim,
            samples_per_class: s.samples_per_class,
            ambient_dim: s.ambient_dim,
            noise_sigma: s.noise_sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    /// Columns kept for the similarity matrix.
    pub similarity_cap: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            similarity_cap: DEFAULT_SIMILARITY_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root of every random stream in the run.
    pub seed: u64,
    /// Parent of the per-run directories.
    pub output_dir: PathBuf,
    pub federation: FederationConfig,
    pub backbone: BackboneConfig,
    pub dataset: DatasetConfig,
    pub diagnostics: DiagnosticsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs"),
            federation: FederationConfig::default(),
            backbone: BackboneConfig::default(),
            dataset: DatasetConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses TOML, or JSON when the extension is `.json`, and validates.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let config = if is_json {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
        .map_err(|message| ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes to JSON");
        sha256_hex(canonical.as_bytes())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        // TOML integers are signed 64-bit.
        if i64::try_from(self.seed).is_err() {
            return Err(ConfigError::Invalid(format!(
                "seed {} exceeds {}",
                self.seed,
                i64::MAX
            )));
        }
        self.federation.validate()?;
        if self.backbone.embed_dim == 0 || self.backbone.hidden.contains(&0) {
            return Err(ConfigError::Invalid(
                "backbone widths must be positive".into(),
            ));
        }
        if self.diagnostics.similarity_cap == 0 {
            return Err(ConfigError::Invalid(
                "similarity_cap must be at least 1".into(),
            ));
        }
        if let DatasetConfig::Synthetic {
            classes,
            per_class_dim,
            samples_per_class,
            ambient_dim,
            noise_sigma,
        } = self.dataset
        {
            if classes == 0 || per_class_dim == 0 || samples_per_class == 0 {
                return Err(ConfigError::Invalid(
                    "synthetic classes, per_class_dim and samples_per_class must be positive"
                        .into(),
                ));
            }
            if classes * per_class_dim > ambient_dim {
                return Err(ConfigError::Invalid(format!(
                    "{classes} classes of dimension {per_class_dim} exceed ambient_dim {ambient_dim}"
                )));
            }
            if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
                return Err(ConfigError::Invalid(format!("noise_sigma {noise_sigma}")));
            }
            let total = classes * samples_per_class;
            let needed =
                self.federation.effective_clients() * self.federation.min_per_client.max(1);
            if total < needed {
                return Err(ConfigError::Invalid(format!(
                    "{total} samples cannot cover {needed} client slots"
                )));
            }
        }
        Ok(())
    }

    pub fn data_seed(&self) -> u64 {
        derive_seed(self.seed, tags::DATA)
    }

    pub fn partition_seed(&self) -> u64 {
        derive_seed(self.seed, tags::PARTITION)
    }

    pub fn similarity_seed(&self) -> u64 {
        derive_seed(self.seed, tags::SIMILARITY)
    }

    /// Builds or loads the dataset. A relative CSV path is resolved against
    /// `base`, normally the config file's directory.
    pub fn dataset(&self, base: &Path) -> Result<Dataset, DataError> {
        match &self.dataset {
            &DatasetConfig::Synthetic {
                classes,
                per_class_dim,
                samples_per_class,
                ambient_dim,
                noise_sigma,
            } => gen_union_of_subspaces(&SyntheticSpec {
                classes,
                per_class_dim,
                samples_per_class,
                ambient_dim,
                noise_sigma,
                seed: self.data_seed(),
            }),
            DatasetConfig::Csv { path } => load_csv(&base.join(path)),
        }
    }

    pub fn shape(&self, input_dim: usize) -> ShapeManifest {
        ShapeManifest::mlp(input_dim, &self.backbone.hidden, self.backbone.embed_dim)
    }

    /// Per-class subspace dimensions, known only for synthetic data.
    pub fn per_class_dims(&self) -> Option<Vec<usize>> {
        match self.dataset {
            DatasetConfig::Synthetic {
                classes,
                per_class_dim,
                ..
            } => Some(vec![per_class_dim; classes]),
            DatasetConfig::Csv { .. } => None,
        }
    }
}
