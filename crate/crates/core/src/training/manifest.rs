//! The run manifest: configs, dataset fingerprint, per-stage hashes, losses,
//! and wall-clock times. Written after every stage, including failures.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::TrainError;
use crate::training::config::PipelineConfig;

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Completed,
    /// Artifacts were reused from a previous identical run.
    Reused,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stage1Info {
    pub status: StageStatus,
    pub wall_ms: u64,
    pub n_source_images: usize,
    pub d_gesture: usize,
    pub mean_feature_hash: String,
    pub projection_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairOptimization {
    pub pair_id: String,
    /// None when Stage II ran with zero epochs.
    pub initial_epoch_loss: Option<f64>,
    pub final_epoch_loss: Option<f64>,
    pub embedding_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stage2Info {
    pub status: StageStatus,
    pub wall_ms: u64,
    pub backend_hash_start: String,
    pub backend_hash_end: String,
    /// Mean loss across pairs, per epoch.
    pub epoch_mean_losses: Vec<f64>,
    pub pairs: Vec<PairOptimization>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stage3Info {
    pub status: StageStatus,
    pub wall_ms: u64,
    pub param_hash_start: String,
    pub param_hash_end: String,
    pub epoch_mean_losses: Vec<f64>,
    pub embedding_hashes_start: BTreeMap<String, String>,
    pub embedding_hashes_end: BTreeMap<String, String>,
    pub projection_hash_end: String,
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailureInfo {
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub config: PipelineConfig,
    pub config_hash: String,
    pub dataset_fingerprint: String,
    pub n_train_pairs: usize,
    pub stage1: Option<Stage1Info>,
    pub stage2: Option<Stage2Info>,
    pub stage3: Option<Stage3Info>,
    pub failure: Option<FailureInfo>,
}

impl RunManifest {
    pub fn new(config: PipelineConfig, config_hash: String, dataset_fingerprint: String) -> Self {
        Self {
            format_version: MANIFEST_FORMAT_VERSION,
            config,
            config_hash,
            dataset_fingerprint,
            n_train_pairs: 0,
            stage1: None,
            stage2: None,
            stage3: None,
            failure: None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| TrainError::Manifest(e.to_string()))?;
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, json).map_err(|source| TrainError::Io {
            path: tmp.clone(),
            source,
        })?;
        fs::rename(&tmp, path).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = fs::read_to_string(path).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let manifest: Self =
            serde_json::from_str(&text).map_err(|e| TrainError::Manifest(e.to_string()))?;
        if manifest.format_version > MANIFEST_FORMAT_VERSION {
            return Err(TrainError::Manifest(format!(
                "manifest format version {} is newer than supported {}",
                manifest.format_version, MANIFEST_FORMAT_VERSION
            )));
        }
        Ok(manifest)
    }
}
