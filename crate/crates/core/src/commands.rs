//! The three CLI commands as library functions, so tests can drive them
//! without a subprocess. Each returns a typed error whose `exit_code` is
//! what the binary exits with.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::backbone::{forward, BackboneError, BackboneParams};
use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
use crate::config::{ConfigError, RunConfig};
use crate::datagen::{dirichlet_partition, DataError, Dataset};
use crate::diagnostics::{
    class_spectra, cosine_matrix_capped, orthogonality_score, DiagnosticsError, OrthogonalityScore,
};
use crate::federation::{run_with, FederationError, RoundWriter, RunOutput};
use crate::gradcheck::{run_gradcheck, CaseResult, GradcheckOptions, GradcheckReport};
use crate::manifest::{create_run_dir, RunManifest, RunStatus};
use crate::mcr2::{check_theorem1_conditions, Theorem1Report};

pub mod files {
    pub const CONFIG: &str = "config.toml";
    pub const PARTITION: &str = "partition.json";
    pub const ROUNDS_CSV: &str = "rounds.csv";
    pub const ROUNDS_JSONL: &str = "rounds.jsonl";
    pub const CHECKPOINT: &str = "checkpoint.flowmat";
    pub const SIMILARITY: &str = "similarity.flowmat";
    pub const SIMILARITY_CSV: &str = "similarity.csv";
    pub const SIMILARITY_ORDER: &str = "similarity.json";
    pub const SPECTRA_CSV: &str = "spectra.csv";
    pub const SPECTRA_JSON: &str = "spectra.json";
    pub const DIAGNOSTICS: &str = "diagnostics.json";
}

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("checkpoint does not fit the config: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("training diverged: {0}")]
    Diverged(FederationError),
    #[error(transparent)]
    Federation(FederationError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("gradient check failed: max relative error {:e} in {}", .0.max_error(), case_json(.0))]
    GradcheckFailed(Box<CaseResult>),
}

impl CommandError {
    /// 2 for anything wrong with the inputs, 3 for numerical divergence,
    /// 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_)
            | Self::Data(_)
            | Self::ShapeMismatch(_)
            | Self::Checkpoint(_)
            | Self::Manifest { .. } => 2,
            Self::Federation(
                FederationError::InvalidConfig(_) | FederationError::PlanMismatch(_),
            ) => 2,
            Self::Diverged(_) => 3,
            Self::Federation(_)
            | Self::Diagnostics(_)
            | Self::Io { .. }
            | Self::GradcheckFailed(_) => 1,
        }
    }
}

impl From<FederationError> for CommandError {
    fn from(e: FederationError) -> Self {
        match e {
            FederationError::NonFiniteParameters { .. }
            | FederationError::NonFiniteModel { .. } => Self::Diverged(e),
            other => Self::Federation(other),
        }
    }
}

fn case_json(case: &CaseResult) -> String {
    serde_json::to_string(&case.config).expect("case config serializes")
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> CommandError + '_ {
    move |source| CommandError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Directory of `path`, falling back to the working directory.
fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn absolute(path: &Path) -> PathBuf {
    std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf())
}

/// Summary written to `diagnostics.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsSummary {
    pub samples: usize,
    pub similarity_columns: usize,
    pub orthogonality: OrthogonalityScore,
    pub min_rank_ratio: f64,
    /// Present when per-class subspace dimensions are known.
    pub theorem1: Option<Theorem1Report>,
}

/// Embeds the whole dataset and writes similarity, spectra and summary
/// artifacts into `out`.
pub fn write_diagnostics(
    config: &RunConfig,
    dataset: &Dataset,
    params: &BackboneParams,
    out: &Path,
) -> Result<DiagnosticsSummary, CommandError> {
    let (z, _) = forward(params, dataset.x())
        .map_err(|e: BackboneError| CommandError::ShapeMismatch(e.to_string()))?;
    let labels = dataset.labels();
    let k = dataset.num_classes();

    let sim = cosine_matrix_capped(
        &z,
        labels,
        config.diagnostics.similarity_cap,
        config.similarity_seed(),
    )?;
    let flowmat = out.join(files::SIMILARITY);
    sim.save(
        &flowmat,
        &out.join(files::SIMILARITY_CSV),
        &out.join(files::SIMILARITY_ORDER),
    )
    .map_err(io_at(&flowmat))?;

    let spectra = class_spectra(&z, labels, k)?;
    let spectra_csv = out.join(files::SPECTRA_CSV);
    spectra
        .save(&spectra_csv, &out.join(files::SPECTRA_JSON))
        .map_err(io_at(&spectra_csv))?;

    let theorem1 = config.per_class_dims().map(|dims| {
        check_theorem1_conditions(
            config.backbone.embed_dim,
            &dims,
            &dataset.class_counts(),
            config.federation.epsilon,
        )
    });
    let summary = DiagnosticsSummary {
        samples: dataset.len(),
        similarity_columns: sim.len(),
        orthogonality: orthogonality_score(&sim),
        min_rank_ratio: spectra.min_rank_ratio(),
        theorem1,
    };
    let path = out.join(files::DIAGNOSTICS);
    let body = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(&path, body + "\n").map_err(io_at(&path))?;
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub manifest: RunManifest,
    pub output: RunOutput,
    pub diagnostics: DiagnosticsSummary,
}

/// Where a run's relative paths resolve.
#[derive(Debug, Clone)]
pub struct RunLocation {
    /// Base for a relative CSV dataset path.
    pub dataset_base: PathBuf,
    /// Parent of the new run directory.
    pub output_root: PathBuf,
}

impl RunLocation {
    /// Relative paths in a config file resolve against its directory.
    pub fn for_config_file(config: &RunConfig, config_path: &Path) -> Self {
        let base = absolute(&parent_dir(config_path));
        Self {
            output_root: base.join(&config.output_dir),
            dataset_base: base,
        }
    }
}

/// Loads `config_path` and trains.
pub fn cmd_train(config_path: &Path) -> Result<TrainOutcome, CommandError> {
    let config = RunConfig::load(config_path)?;
    let location = RunLocation::for_config_file(&config, config_path);
    train(&config, &location)
}

/// Re-runs the experiment a manifest describes into a fresh run directory
/// beside the original.
pub fn cmd_train_from_manifest(manifest_path: &Path) -> Result<TrainOutcome, CommandError> {
    let manifest = RunManifest::load(manifest_path).map_err(|e| CommandError::Manifest {
        path: manifest_path.to_path_buf(),
        message: e.to_string(),
    })?;
    manifest.config.validate()?;
    train(
        &manifest.config,
        &RunLocation {
            dataset_base: manifest.dataset_base.clone(),
            output_root: manifest.output_root.clone(),
        },
    )
}

pub fn train(config: &RunConfig, location: &RunLocation) -> Result<TrainOutcome, CommandError> {
    config.validate()?;
    let dataset = config.dataset(&location.dataset_base)?;
    let shape = config.shape(dataset.input_dim());
    let fed = &config.federation;
    let plan = dirichlet_partition(
        dataset.labels(),
        fed.effective_clients(),
        fed.dirichlet_alpha,
        config.partition_seed(),
        fed.min_per_client,
    )?;

    let root = &location.output_root;
    let root = fs::create_dir_all(root)
        .and_then(|()| fs::canonicalize(root))
        .map_err(io_at(root))?;
    let run_dir = create_run_dir(&root, &config.content_hash()).map_err(io_at(&root))?;
    log::info!("run directory {}", run_dir.display());
    let mut manifest = RunManifest::start(config, &absolute(&location.dataset_base), &root);
    manifest.write(&run_dir).map_err(io_at(&run_dir))?;

    let config_file = run_dir.join(files::CONFIG);
    fs::write(&config_file, config.to_toml()).map_err(io_at(&config_file))?;
    plan.save_json(&run_dir.join(files::PARTITION))?;

    let csv = run_dir.join(files::ROUNDS_CSV);
    let mut writer =
        RoundWriter::create(&csv, &run_dir.join(files::ROUNDS_JSONL)).map_err(io_at(&csv))?;
    let trained = run_with(fed, &dataset, &plan, &shape, config.seed, &mut writer);
    writer.finish().map_err(io_at(&csv))?;
    let output = match trained {
        Ok(output) => output,
        Err(e) => {
            let status = match e {
                FederationError::NonFiniteParameters { .. }
                | FederationError::NonFiniteModel { .. } => RunStatus::Diverged,
                _ => RunStatus::Failed,
            };
            manifest
                .finalize(&run_dir, status)
                .map_err(io_at(&run_dir))?;
            return Err(e.into());
        }
    };
    manifest.tau = Some(output.tau);
    manifest.aggregations = Some(output.aggregations);

    save_checkpoint(&output.params, &run_dir.join(files::CHECKPOINT))?;
    let diagnostics = write_diagnostics(config, &dataset, &output.params, &run_dir)?;
    manifest
        .finalize(&run_dir, RunStatus::Completed)
        .map_err(io_at(&run_dir))?;
    Ok(TrainOutcome {
        run_dir,
        manifest,
        output,
        diagnostics,
    })
}

/// Default output directory of `diagnose`: next to the checkpoint.
pub fn default_diagnose_dir(checkpoint: &Path) -> PathBuf {
    parent_dir(checkpoint).join("diagnose")
}

/// Recomputes representations from a checkpoint and writes the diagnostics.
pub fn cmd_diagnose(
    checkpoint: &Path,
    config_path: &Path,
    out: Option<&Path>,
) -> Result<DiagnosticsSummary, CommandError> {
    let config = RunConfig::load(config_path)?;
    let location = RunLocation::for_config_file(&config, config_path);
    let params = load_checkpoint(checkpoint)?;
    let dataset = config.dataset(&location.dataset_base)?;
    let expected = config.shape(dataset.input_dim());
    if params.shape() != expected {
        return Err(CommandError::ShapeMismatch(format!(
            "checkpoint has layers {:?}, config implies {:?}",
            params.shape().widths(),
            expected.widths()
        )));
    }
    let out = out.map_or_else(|| default_diagnose_dir(checkpoint), Path::to_path_buf);
    fs::create_dir_all(&out).map_err(io_at(&out))?;
    write_diagnostics(&config, &dataset, &params, &out)
}

/// Runs the finite-difference harness; a failing report is an error.
pub fn cmd_gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport, CommandError> {
    let report = run_gradcheck(opts);
    if report.passed() {
        Ok(report)
    } else {
        Err(CommandError::GradcheckFailed(Box::new(
            report.worst().clone(),
        )))
    }
}
