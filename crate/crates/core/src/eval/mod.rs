//! The evaluation suite: FID, KID, hand-cropped FID-H/KID-H, and HAND-CONF,
//! over directories of real and generated images, with pluggable feature
//! extractor and hand detector.

pub mod crops;
pub mod extractor;
pub mod fid;
pub mod kid;
pub mod stats;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifacts::report::{self as metric_names, MetricEntry, MetricReport};
use crate::error::EvalError;
use crate::gesture::GestureRecognizerAdapter;
use crate::img::{self, Image};

pub use crops::{crop_hand_regions, CropOutcome};
pub use extractor::{DownsampleExtractor, FeatureExtractorAdapter, IdentityExtractor, RemoteExtractor};
pub use fid::fid;
pub use kid::{kid, kid_detailed, KidOutcome, DEFAULT_N_SUBSETS, DEFAULT_SUBSET_SIZE};
pub use stats::FeatureStats;

/// Mean over images of the maximum detection confidence; images with no
/// detection contribute zero, so a generator that produces nothing
/// recognizable scores worse.
pub fn hand_conf(
    images: &[Image],
    detector: &dyn GestureRecognizerAdapter,
) -> Result<f64, EvalError> {
    if images.is_empty() {
        return Err(EvalError::TooFewSamples {
            needed: 1,
            got: 0,
            context: "hand confidence".to_string(),
        });
    }
    let mut total = 0.0f64;
    for image in images {
        let best = detector
            .detect(image)?
            .iter()
            .map(|d| f64::from(d.confidence))
            .fold(0.0f64, f64::max);
        total += best;
    }
    Ok(total / images.len() as f64)
}

/// A hand-crop metric value with its surviving-patch bookkeeping.
#[derive(Debug, Clone)]
pub struct HandMetricOutcome {
    pub value: f64,
    pub n_real_patches: usize,
    pub n_gen_patches: usize,
    pub excluded_real: usize,
    pub excluded_gen: usize,
}

fn extract_all(
    images: &[Image],
    extractor: &dyn FeatureExtractorAdapter,
) -> Result<Vec<Vec<f64>>, EvalError> {
    images.iter().map(|i| extractor.extract(i)).collect()
}

/// FID over detector crops of both sets.
pub fn fid_h(
    real_images: &[Image],
    gen_images: &[Image],
    detector: &dyn GestureRecognizerAdapter,
    extractor: &dyn FeatureExtractorAdapter,
    patch_size: usize,
) -> Result<HandMetricOutcome, EvalError> {
    let real = crop_hand_regions(real_images, detector, patch_size)?;
    let generated = crop_hand_regions(gen_images, detector, patch_size)?;
    for (crop, name) in [(&real, "real"), (&generated, "generated")] {
        if crop.patches.len() < 2 {
            return Err(EvalError::TooFewSamples {
                needed: 2,
                got: crop.patches.len(),
                context: format!("{name} patches surviving hand cropping"),
            });
        }
    }
    let stats_real = FeatureStats::from_features(&extract_all(&real.patches, extractor)?)?;
    let stats_gen = FeatureStats::from_features(&extract_all(&generated.patches, extractor)?)?;
    Ok(HandMetricOutcome {
        value: fid(&stats_real, &stats_gen)?,
        n_real_patches: real.patches.len(),
        n_gen_patches: generated.patches.len(),
        excluded_real: real.n_excluded,
        excluded_gen: generated.n_excluded,
    })
}

/// KID over detector crops of both sets.
#[allow(clippy::too_many_arguments)]
pub fn kid_h(
    real_images: &[Image],
    gen_images: &[Image],
    detector: &dyn GestureRecognizerAdapter,
    extractor: &dyn FeatureExtractorAdapter,
    patch_size: usize,
    subset_size: usize,
    n_subsets: usize,
    seed: u64,
) -> Result<HandMetricOutcome, EvalError> {
    let real = crop_hand_regions(real_images, detector, patch_size)?;
    let generated = crop_hand_regions(gen_images, detector, patch_size)?;
    let value = kid(
        &extract_all(&real.patches, extractor)?,
        &extract_all(&generated.patches, extractor)?,
        subset_size,
        n_subsets,
        seed,
    )?;
    Ok(HandMetricOutcome {
        value,
        n_real_patches: real.patches.len(),
        n_gen_patches: generated.patches.len(),
        excluded_real: real.n_excluded,
        excluded_gen: generated.n_excluded,
    })
}

/// Evaluation options for the directory-level suite.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub patch_size: usize,
    pub kid_subset_size: usize,
    pub kid_n_subsets: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            patch_size: 16,
            kid_subset_size: DEFAULT_SUBSET_SIZE,
            kid_n_subsets: DEFAULT_N_SUBSETS,
            seed: 0,
        }
    }
}

/// Loads all PNGs under a directory as grayscale images.
pub fn load_image_dir(dir: &Path) -> Result<Vec<Image>, EvalError> {
    let paths = img::list_pngs(dir).map_err(|e| EvalError::Io {
        path: dir.to_path_buf(),
        source: std::io::Error::other(e),
    })?;
    paths
        .iter()
        .map(|p| {
            img::load_png(p).map_err(|e| EvalError::Io {
                path: p.clone(),
                source: std::io::Error::other(e),
            })
        })
        .collect()
}

/// Runs the full metric suite over two image sets and assembles the report
/// (FID, KID, FID-H, KID-H on real vs generated; HAND-CONF on generated).
pub fn evaluate_sets(
    real_images: &[Image],
    gen_images: &[Image],
    detector: &dyn GestureRecognizerAdapter,
    extractor: &dyn FeatureExtractorAdapter,
    options: &EvalOptions,
    config_hash: &str,
) -> Result<MetricReport, EvalError> {
    let mut report = MetricReport::new(config_hash);
    let (n_real, n_gen) = (real_images.len(), gen_images.len());

    let feats_real = extract_all(real_images, extractor)?;
    let feats_gen = extract_all(gen_images, extractor)?;
    let stats_real = FeatureStats::from_features(&feats_real)?;
    let stats_gen = FeatureStats::from_features(&feats_gen)?;
    report.insert(
        metric_names::FID,
        MetricEntry::new(fid(&stats_real, &stats_gen)?, n_real, n_gen),
    )?;
    report.insert(
        metric_names::KID,
        MetricEntry::new(
            kid(
                &feats_real,
                &feats_gen,
                options.kid_subset_size.min(n_real).min(n_gen),
                options.kid_n_subsets,
                options.seed,
            )?,
            n_real,
            n_gen,
        ),
    )?;

    let fid_h_out = fid_h(real_images, gen_images, detector, extractor, options.patch_size)?;
    let mut entry =
        MetricEntry::new(fid_h_out.value, fid_h_out.n_real_patches, fid_h_out.n_gen_patches);
    entry.excluded_real = Some(fid_h_out.excluded_real);
    entry.excluded_generated = Some(fid_h_out.excluded_gen);
    report.insert(metric_names::FID_H, entry)?;

    let kid_h_out = kid_h(
        real_images,
        gen_images,
        detector,
        extractor,
        options.patch_size,
        options
            .kid_subset_size
            .min(fid_h_out.n_real_patches)
            .min(fid_h_out.n_gen_patches),
        options.kid_n_subsets,
        options.seed,
    )?;
    let mut entry =
        MetricEntry::new(kid_h_out.value, kid_h_out.n_real_patches, kid_h_out.n_gen_patches);
    entry.excluded_real = Some(kid_h_out.excluded_real);
    entry.excluded_generated = Some(kid_h_out.excluded_gen);
    report.insert(metric_names::KID_H, entry)?;

    report.insert(
        metric_names::HAND_CONF,
        MetricEntry::new(hand_conf(gen_images, detector)?, n_real, n_gen),
    )?;
    Ok(report)
}

/// Directory-level entry point used by the CLI.
pub fn evaluate_dirs(
    real_dir: &Path,
    gen_dir: &Path,
    detector: &dyn GestureRecognizerAdapter,
    extractor: &dyn FeatureExtractorAdapter,
    options: &EvalOptions,
    config_hash: &str,
) -> Result<MetricReport, EvalError> {
    let real = load_image_dir(real_dir)?;
    let generated = load_image_dir(gen_dir)?;
    evaluate_sets(&real, &generated, detector, extractor, options, config_hash)
}
