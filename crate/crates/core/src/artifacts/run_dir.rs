//! Run directory layout: `runs/<hash8>/{bundle/, embeddings/, checkpoints/, samples/, reports/}`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::artifacts::config::short_hash;
use crate::error::TrainError;

/// Paths inside one run directory. The directory name is the first eight hex
/// chars of the resolved config hash, so reruns with identical config collide
/// intentionally and can reuse each other's artifacts.
#[derive(Debug, Clone)]
pub struct RunDirs {
    root: PathBuf,
}

impl RunDirs {
    pub fn for_config_hash(base: &Path, config_hash_hex: &str) -> Self {
        Self {
            root: base.join(short_hash(config_hash_hex)),
        }
    }

    pub fn at(root: PathBuf) -> Self {
        Self { root }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn bundle_dir(&self) -> PathBuf {
        self.root.join("bundle")
    }

    pub fn embeddings_dir(&self) -> PathBuf {
        self.root.join("embeddings")
    }

    pub fn checkpoints_dir(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn samples_dir(&self) -> PathBuf {
        self.root.join("samples")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    /// Creates the full directory tree.
    pub fn ensure(&self) -> Result<(), TrainError> {
        for dir in [
            self.root.clone(),
            self.bundle_dir(),
            self.embeddings_dir(),
            self.checkpoints_dir(),
            self.samples_dir(),
            self.reports_dir(),
        ] {
            fs::create_dir_all(&dir).map_err(|source| TrainError::Io { path: dir, source })?;
        }
        Ok(())
    }
}
