//! Dataset construction: captioning and enrichment through adapters, QA
//! metrics, deterministic train/test splits, and the synthetic toy glyph
//! dataset.

pub mod adapters;
pub mod build;
pub mod qa;
pub mod toy;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::DatasetError;
use crate::rng::derive_seed;

pub use adapters::{
    BasisHashEmbedder, CaptionerAdapter, ConstantJointEmbedder, EnricherAdapter,
    HashJointEmbedder, JointEmbedderAdapter, RemoteCaptioner, RemoteEnricher,
    RemoteJointEmbedder, TemplateCaptioner, TemplateEnricher,
};
pub use build::{build_dataset, BuildOptions};
pub use qa::{caption_caption_similarity, image_caption_consistency, qa_report, render_qa_table, QaReport, QaRow};
pub use toy::make_toy_dataset;

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One text-image pair of the dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub pair_id: String,
    /// Image path relative to the dataset root.
    pub image: PathBuf,
    pub raw_caption: String,
    pub enriched_caption: String,
    pub gesture_id: String,
    pub split: Split,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub captioner: String,
    pub enricher: String,
    pub seed: u64,
    pub gestures: Vec<String>,
    pub image_size: usize,
}

/// A dataset rooted at a directory: `meta.json`, `manifest.jsonl` (one record
/// per line), images under `<gesture>/<pair_id>.png`.
#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
    pub meta: DatasetMeta,
    pub records: Vec<DatasetRecord>,
}

impl Dataset {
    pub fn save(root: &Path, meta: DatasetMeta, records: Vec<DatasetRecord>) -> Result<Self, DatasetError> {
        fs::create_dir_all(root).map_err(|source| DatasetError::Io {
            path: root.to_path_buf(),
            source,
        })?;
        let meta_json = serde_json::to_string_pretty(&meta).expect("meta serialization");
        fs::write(root.join("meta.json"), meta_json).map_err(|source| DatasetError::Io {
            path: root.join("meta.json"),
            source,
        })?;
        let mut lines = String::new();
        for record in &records {
            lines.push_str(&serde_json::to_string(record).expect("record serialization"));
            lines.push('\n');
        }
        fs::write(root.join("manifest.jsonl"), lines).map_err(|source| DatasetError::Io {
            path: root.join("manifest.jsonl"),
            source,
        })?;
        Ok(Self {
            root: root.to_path_buf(),
            meta,
            records,
        })
    }

    pub fn load(root: &Path) -> Result<Self, DatasetError> {
        let meta_path = root.join("meta.json");
        let meta_text = fs::read_to_string(&meta_path).map_err(|source| DatasetError::Io {
            path: meta_path.clone(),
            source,
        })?;
        let meta: DatasetMeta =
            serde_json::from_str(&meta_text).map_err(|e| DatasetError::Manifest {
                path: meta_path.clone(),
                reason: e.to_string(),
            })?;
        if meta.format_version > DATASET_FORMAT_VERSION {
            return Err(DatasetError::Manifest {
                path: meta_path,
                reason: format!(
                    "format version {} is newer than supported {}",
                    meta.format_version, DATASET_FORMAT_VERSION
                ),
            });
        }
        let manifest_path = root.join("manifest.jsonl");
        let text = fs::read_to_string(&manifest_path).map_err(|source| DatasetError::Io {
            path: manifest_path.clone(),
            source,
        })?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: DatasetRecord =
                serde_json::from_str(line).map_err(|e| DatasetError::Manifest {
                    path: manifest_path.clone(),
                    reason: format!("line {}: {e}", i + 1),
                })?;
            records.push(record);
        }
        Ok(Self {
            root: root.to_path_buf(),
            meta,
            records,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn image_path(&self, record: &DatasetRecord) -> PathBuf {
        self.root.join(&record.image)
    }

    /// SHA-256 over the manifest bytes; identifies the dataset in run
    /// manifests.
    pub fn fingerprint(&self) -> Result<String, DatasetError> {
        let manifest_path = self.root.join("manifest.jsonl");
        let bytes = fs::read(&manifest_path).map_err(|source| DatasetError::Io {
            path: manifest_path,
            source,
        })?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    pub fn records_for(&self, gesture_id: &str, split: Split) -> Vec<&DatasetRecord> {
        self.records
            .iter()
            .filter(|r| r.gesture_id == gesture_id && r.split == split)
            .collect()
    }
}

/// Deterministic split assignment: records are ranked by a keyed hash of
/// (seed, pair_id), the first `n_train` become train, the next `n_test` test.
/// Membership is a pure function of (pair_id, seed) for a fixed cohort.
pub fn assign_splits(pair_ids: &[String], n_train: usize, n_test: usize, seed: u64) -> Vec<Split> {
    debug_assert!(
        pair_ids.len() <= n_train + n_test,
        "cohort larger than the requested split sizes"
    );
    let mut ranked: Vec<(u64, usize)> = pair_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (derive_seed(seed, &["split", id]), i))
        .collect();
    ranked.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| pair_ids[a.1].cmp(&pair_ids[b.1])));
    let mut splits = vec![Split::Test; pair_ids.len()];
    for (rank, &(_, idx)) in ranked.iter().enumerate() {
        splits[idx] = if rank < n_train { Split::Train } else { Split::Test };
    }
    splits
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_deterministic_and_order_invariant() {
        let ids: Vec<String> = (0..20).map(|i| format!("g_{i:04}")).collect();
        let a = assign_splits(&ids, 12, 8, 7);
        let b = assign_splits(&ids, 12, 8, 7);
        assert_eq!(a, b);
        assert_eq!(a.iter().filter(|s| **s == Split::Train).count(), 12);

        // Permuting the cohort must not change any id's membership.
        let mut shuffled = ids.clone();
        shuffled.reverse();
        let c = assign_splits(&shuffled, 12, 8, 7);
        for (i, id) in ids.iter().enumerate() {
            let j = shuffled.iter().position(|s| s == id).unwrap();
            assert_eq!(a[i], c[j], "membership changed for {id}");
        }

        let d = assign_splits(&ids, 12, 8, 8);
        assert_ne!(a, d, "different seeds should reshuffle the split");
    }
}
