//! Dataset construction from a directory of per-gesture images: caption,
//! enrich, split, and emit the manifest.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::dataset::adapters::{CaptionerAdapter, EnricherAdapter};
use crate::dataset::toy::gesture_phrase;
use crate::dataset::{assign_splits, Dataset, DatasetMeta, DatasetRecord, Split, DATASET_FORMAT_VERSION};
use crate::error::DatasetError;
use crate::img::{list_pngs, load_png};

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    /// Abort when more than this percentage of records fail their adapters.
    pub failure_budget_pct: f64,
    /// Per-image retries after the first attempt.
    pub retries: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            n_train: 1000,
            n_test: 1000,
            seed: 0,
            failure_budget_pct: 1.0,
            retries: 2,
        }
    }
}

struct Captioned {
    raw: String,
    enriched: String,
    failures: usize,
}

fn caption_one(
    image_path: &Path,
    phrase: &str,
    captioner: &dyn CaptionerAdapter,
    enricher: &dyn EnricherAdapter,
    retries: usize,
) -> Result<Captioned, (usize, DatasetError)> {
    let mut failures = 0usize;
    let mut last_err: Option<DatasetError> = None;
    for _ in 0..=retries {
        let attempt = (|| -> Result<Captioned, DatasetError> {
            let image = load_png(image_path).map_err(|e| DatasetError::Io {
                path: image_path.to_path_buf(),
                source: std::io::Error::other(e),
            })?;
            let raw = captioner.caption(&image)?;
            if raw.is_empty() {
                return Err(DatasetError::AdapterFailure {
                    name: captioner.name().to_string(),
                    reason: "empty caption".to_string(),
                });
            }
            let enriched = enricher.enrich(&raw, phrase)?;
            if !enriched.to_lowercase().contains(&phrase.to_lowercase()) {
                return Err(DatasetError::MissingPhrase {
                    pair_id: image_path.display().to_string(),
                    phrase: phrase.to_string(),
                });
            }
            Ok(Captioned {
                raw,
                enriched,
                failures: 0,
            })
        })();
        match attempt {
            Ok(mut ok) => {
                ok.failures = failures;
                return Ok(ok);
            }
            Err(e) => {
                failures += 1;
                log::warn!("captioning {} failed: {e}", image_path.display());
                last_err = Some(e);
            }
        }
    }
    Err((failures, last_err.expect("at least one attempt")))
}

/// Builds a dataset under `out_root` from `<image_dir>/<gesture>/*.png`.
///
/// Every record is captioned then enriched (with per-image retries); images
/// whose adapters fail permanently are replaced from the remaining pool.
/// The run aborts when permanent failures exceed the failure budget.
pub fn build_dataset(
    image_dir: &Path,
    out_root: &Path,
    gesture_labels: &[String],
    captioner: &dyn CaptionerAdapter,
    enricher: &dyn EnricherAdapter,
    options: &BuildOptions,
) -> Result<Dataset, DatasetError> {
    let per_gesture = options.n_train + options.n_test;
    let total_target = per_gesture * gesture_labels.len();
    let budget = (total_target as f64 * options.failure_budget_pct / 100.0).floor() as usize;
    let mut permanent_failures = 0usize;
    let mut records = Vec::with_capacity(total_target);

    for gesture_id in gesture_labels {
        let gesture_dir = image_dir.join(gesture_id);
        let pool = list_pngs(&gesture_dir).map_err(|e| DatasetError::Io {
            path: gesture_dir.clone(),
            source: std::io::Error::other(e),
        })?;
        if pool.len() < per_gesture {
            return Err(DatasetError::InsufficientImages {
                gesture: gesture_id.clone(),
                available: pool.len(),
                needed: per_gesture,
            });
        }
        let phrase = gesture_phrase(gesture_id);

        // First pass over the initial candidates, fanned out; commit order is
        // the sorted candidate order so manifests are deterministic.
        let first: Vec<Result<Captioned, (usize, DatasetError)>> = pool[..per_gesture]
            .par_iter()
            .map(|path| caption_one(path, &phrase, captioner, enricher, options.retries))
            .collect();

        let mut accepted: Vec<(std::path::PathBuf, Captioned)> = Vec::with_capacity(per_gesture);
        let mut replacements = per_gesture; // next pool index
        for (path, outcome) in pool[..per_gesture].iter().zip(first) {
            match outcome {
                Ok(c) => accepted.push((path.clone(), c)),
                Err((_, err)) => {
                    permanent_failures += 1;
                    if permanent_failures > budget {
                        return Err(DatasetError::FailureBudgetExceeded {
                            name: format!("{}+{}", captioner.name(), enricher.name()),
                            failed: permanent_failures,
                            total: total_target,
                            budget_pct: options.failure_budget_pct,
                        });
                    }
                    log::warn!("dropping failed record ({err}); drawing a replacement");
                    // Sequential replacement from the back of the pool.
                    let mut replaced = false;
                    while replacements < pool.len() {
                        let candidate = &pool[replacements];
                        replacements += 1;
                        match caption_one(candidate, &phrase, captioner, enricher, options.retries)
                        {
                            Ok(c) => {
                                accepted.push((candidate.clone(), c));
                                replaced = true;
                                break;
                            }
                            Err(_) => {
                                permanent_failures += 1;
                                if permanent_failures > budget {
                                    return Err(DatasetError::FailureBudgetExceeded {
                                        name: format!(
                                            "{}+{}",
                                            captioner.name(),
                                            enricher.name()
                                        ),
                                        failed: permanent_failures,
                                        total: total_target,
                                        budget_pct: options.failure_budget_pct,
                                    });
                                }
                            }
                        }
                    }
                    if !replaced {
                        return Err(DatasetError::InsufficientImages {
                            gesture: gesture_id.clone(),
                            available: pool.len(),
                            needed: per_gesture + permanent_failures,
                        });
                    }
                }
            }
        }

        let mut pair_ids = Vec::with_capacity(per_gesture);
        for (i, (src, captioned)) in accepted.iter().enumerate() {
            let pair_id = format!("{gesture_id}_{i:04}");
            let rel_path = Path::new(gesture_id).join(format!("{pair_id}.png"));
            let dst = out_root.join(&rel_path);
            if let Some(parent) = dst.parent() {
                fs::create_dir_all(parent).map_err(|source| DatasetError::Io {
                    path: parent.to_path_buf(),
                    source,
                })?;
            }
            fs::copy(src, &dst).map_err(|source| DatasetError::Io {
                path: dst.clone(),
                source,
            })?;
            records.push(DatasetRecord {
                pair_id: pair_id.clone(),
                image: rel_path,
                raw_caption: captioned.raw.clone(),
                enriched_caption: captioned.enriched.clone(),
                gesture_id: gesture_id.clone(),
                split: Split::Test, // assigned below
            });
            pair_ids.push(pair_id);
        }
        let splits = assign_splits(&pair_ids, options.n_train, options.n_test, options.seed);
        let base = records.len() - per_gesture;
        for (offset, split) in splits.into_iter().enumerate() {
            records[base + offset].split = split;
        }
    }

    let meta = DatasetMeta {
        format_version: DATASET_FORMAT_VERSION,
        captioner: captioner.name().to_string(),
        enricher: enricher.name().to_string(),
        seed: options.seed,
        gestures: gesture_labels.to_vec(),
        image_size: 0, // source images keep their native size
    };
    Dataset::save(out_root, meta, records)
}
