//! Run manifest: enough to regenerate a run directory from scratch, plus an
//! inventory of what the run wrote.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::federation::{client_tag, EVAL_TAG, INIT_TAG};
use crate::tensor::derive_seed;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Completed,
    Diverged,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub root: u64,
    pub data: u64,
    pub partition: u64,
    pub init: u64,
    pub eval: u64,
    pub similarity: u64,
    pub clients: Vec<u64>,
}

impl SeedRecord {
    pub fn derive(config: &RunConfig) -> Self {
        let root = config.seed;
        Self {
            root,
            data: config.data_seed(),
            partition: config.partition_seed(),
            init: derive_seed(root, INIT_TAG),
            eval: derive_seed(root, EVAL_TAG),
            similarity: config.similarity_seed(),
            clients: (0..config.federation.effective_clients())
                .map(|n| derive_seed(root, &client_tag(n)))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the run directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config: RunConfig,
    pub config_hash: String,
    /// Directory relative dataset paths resolve against.
    pub dataset_base: PathBuf,
    /// Directory the run directory was created in.
    pub output_root: PathBuf,
    pub seeds: SeedRecord,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub status: RunStatus,
    pub tau: Option<usize>,
    pub aggregations: Option<usize>,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn start(config: &RunConfig, dataset_base: &Path, output_root: &Path) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            config_hash: config.content_hash(),
            dataset_base: dataset_base.to_path_buf(),
            output_root: output_root.to_path_buf(),
            seeds: SeedRecord::derive(config),
            started_at: now(),
            finished_at: None,
            status: RunStatus::Running,
            tau: None,
            aggregations: None,
            files: Vec::new(),
        }
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }

    pub fn write(&self, run_dir: &Path) -> io::Result<()> {
        let body = serde_json::to_string_pretty(self)?;
        fs::write(run_dir.join(MANIFEST_FILE), body + "\n")
    }

    /// Records every other file in `run_dir` and writes the manifest.
    pub fn finalize(&mut self, run_dir: &Path, status: RunStatus) -> io::Result<()> {
        self.status = status;
        self.finished_at = Some(now());
        self.files = inventory(run_dir)?;
        self.write(run_dir)
    }

    /// Entries whose file is missing or whose size or digest changed.
    pub fn verify_inventory(&self, run_dir: &Path) -> io::Result<Vec<String>> {
        let mut bad = Vec::new();
        for entry in &self.files {
            let path = run_dir.join(&entry.path);
            match fs::read(&path) {
                Ok(bytes)
                    if bytes.len() as u64 == entry.bytes && sha256_hex(&bytes) == entry.sha256 => {}
                Ok(_) => bad.push(entry.path.clone()),
                Err(e) if e.kind() == io::ErrorKind::NotFound => bad.push(entry.path.clone()),
                Err(e) => return Err(e),
            }
        }
        Ok(bad)
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn inventory(run_dir: &Path) -> io::Result<Vec<FileEntry>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(run_dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name == MANIFEST_FILE || !entry.file_type()?.is_file() {
            continue;
        }
        let bytes = fs::read(entry.path())?;
        files.push(FileEntry {
            path: name,
            bytes: bytes.len() as u64,
            sha256: sha256_hex(&bytes),
        });
    }
    files.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(files)
}

/// Creates `{root}/{UTC timestamp}-{hash12}`, adding a numeric suffix rather
/// than reusing an existing directory.
pub fn create_run_dir(root: &Path, config_hash: &str) -> io::Result<PathBuf> {
    fs::create_dir_all(root)?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let base = format!("{stamp}-{}", &config_hash[..12.min(config_hash.len())]);
    let mut suffix = 0;
    loop {
        let name = if suffix == 0 {
            base.clone()
        } else {
            format!("{base}-{suffix}")
        };
        let dir = root.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => suffix += 1,
            Err(e) => return Err(e),
        }
    }
}
