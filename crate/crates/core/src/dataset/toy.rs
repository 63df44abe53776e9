//! The synthetic glyph dataset: seeded glyph renders with template captions,
//! the desk-scale stand-in for a real gesture corpus.

use std::path::Path;

use rand::Rng;

use crate::dataset::adapters::{EnricherAdapter, TemplateEnricher};
use crate::dataset::{assign_splits, Dataset, DatasetMeta, DatasetRecord, DATASET_FORMAT_VERSION};
use crate::error::DatasetError;
use crate::glyph::{self, lookup_gesture};
use crate::img::save_png;
use crate::rng::rng_for;

const SUBJECTS: [&str; 6] = [
    "a man", "a woman", "a student", "an engineer", "a chef", "a dancer",
];
const PLACES: [&str; 6] = [
    "in an office",
    "in a park",
    "at a desk",
    "in a kitchen",
    "on a stage",
    "in a studio",
];
const DETAILS: [&str; 6] = [
    "wearing a red shirt",
    "wearing a blue jacket",
    "in bright light",
    "near a window",
    "with a calm expression",
    "in soft light",
];

/// The phrase a gesture id maps to in enriched captions.
pub fn gesture_phrase(gesture_id: &str) -> String {
    match lookup_gesture(gesture_id) {
        Some(g) => g.phrase.to_string(),
        None => gesture_id.replace('_', " "),
    }
}

/// Generates `n_per_gesture` records per gesture (half train, half test, by
/// the seeded split), rendering glyph images with random position, scale, and
/// background texture. Fully deterministic per seed.
pub fn make_toy_dataset(
    root: &Path,
    n_per_gesture: usize,
    gestures: &[String],
    image_size: usize,
    seed: u64,
) -> Result<Dataset, DatasetError> {
    let enricher = TemplateEnricher;
    let mut records = Vec::with_capacity(n_per_gesture * gestures.len());
    for gesture_id in gestures {
        let gesture = lookup_gesture(gesture_id).ok_or_else(|| DatasetError::UnknownGesture {
            gesture: gesture_id.clone(),
        })?;
        let mut pair_ids = Vec::with_capacity(n_per_gesture);
        for i in 0..n_per_gesture {
            let pair_id = format!("{gesture_id}_{i:04}");
            let mut rng = rng_for(seed, &["toy-image", &pair_id]);
            let placement = glyph::random_placement(&mut rng, image_size);
            let image = glyph::render_glyph(gesture.shape, &placement, image_size, &mut rng);
            let rel_path = Path::new(gesture_id).join(format!("{pair_id}.png"));
            save_png(&root.join(&rel_path), &image).map_err(|e| DatasetError::Io {
                path: root.join(&rel_path),
                source: std::io::Error::other(e),
            })?;

            let mut crng = rng_for(seed, &["toy-caption", &pair_id]);
            // Scene tags keep captions unique dataset-wide, mirroring the
            // caption diversity of a real corpus.
            let raw_caption = format!(
                "{} {}, {}, scene {i:04}",
                SUBJECTS[crng.gen_range(0..SUBJECTS.len())],
                PLACES[crng.gen_range(0..PLACES.len())],
                DETAILS[crng.gen_range(0..DETAILS.len())],
            );
            let enriched_caption = enricher.enrich(&raw_caption, gesture.phrase)?;
            records.push(DatasetRecord {
                pair_id: pair_id.clone(),
                image: rel_path,
                raw_caption,
                enriched_caption,
                gesture_id: gesture_id.clone(),
                split: crate::dataset::Split::Test, // assigned below
            });
            pair_ids.push(pair_id);
        }
        let n_train = n_per_gesture / 2;
        let n_test = n_per_gesture - n_train;
        let splits = assign_splits(&pair_ids, n_train, n_test, seed);
        let base = records.len() - n_per_gesture;
        for (offset, split) in splits.into_iter().enumerate() {
            records[base + offset].split = split;
        }
    }
    let meta = DatasetMeta {
        format_version: DATASET_FORMAT_VERSION,
        captioner: "toy-template".to_string(),
        enricher: "template".to_string(),
        seed,
        gestures: gestures.to_vec(),
        image_size,
    };
    Dataset::save(root, meta, records)
}
