//! Dataset quality metrics: image-caption consistency and pairwise
//! caption-caption similarity, reported per adapter variant.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::artifacts::report::{
    direction_arrow, CAPTION_CAPTION_SIMILARITY, IMAGE_CAPTION_CONSISTENCY,
};
use crate::dataset::adapters::{check_unit_norm, JointEmbedderAdapter};
use crate::dataset::Dataset;
use crate::error::DatasetError;
use crate::img::load_png;
use crate::rng::rng_for;

pub const DEFAULT_MAX_PAIRS: usize = 100_000;

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum::<f64>().clamp(-1.0, 1.0)
}

/// Order-invariant mean: values are canonically sorted before accumulation.
fn sorted_mean(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean cosine similarity between each record's caption embedding and its
/// image embedding; in [-1, 1] and invariant under record order.
pub fn image_caption_consistency(
    dataset: &Dataset,
    embedder: &dyn JointEmbedderAdapter,
    use_enriched: bool,
) -> Result<f64, DatasetError> {
    if dataset.records.is_empty() {
        return Err(DatasetError::TooFewRecords { needed: 1, got: 0 });
    }
    let mut values = Vec::with_capacity(dataset.records.len());
    for record in &dataset.records {
        let caption = if use_enriched {
            &record.enriched_caption
        } else {
            &record.raw_caption
        };
        let text_vec = embedder.embed_text(caption)?;
        check_unit_norm(embedder.name(), &text_vec)?;
        let image = load_png(&dataset.image_path(record)).map_err(|e| DatasetError::Io {
            path: dataset.image_path(record),
            source: std::io::Error::other(e),
        })?;
        let image_vec = embedder.embed_image(&image)?;
        check_unit_norm(embedder.name(), &image_vec)?;
        values.push(cosine(&text_vec, &image_vec));
    }
    Ok(sorted_mean(values))
}

/// Mean cosine similarity over unordered caption pairs. When the pair count
/// exceeds `max_pairs`, a seeded uniform sample of pairs is used instead.
pub fn caption_caption_similarity(
    captions: &[String],
    embedder: &dyn JointEmbedderAdapter,
    max_pairs: usize,
    seed: u64,
) -> Result<f64, DatasetError> {
    let n = captions.len();
    if n < 2 {
        return Err(DatasetError::TooFewRecords { needed: 2, got: n });
    }
    let mut embeddings = Vec::with_capacity(n);
    for caption in captions {
        let v = embedder.embed_text(caption)?;
        check_unit_norm(embedder.name(), &v)?;
        embeddings.push(v);
    }
    let total = n * (n - 1) / 2;
    let pair_of = |k: usize| -> (usize, usize) {
        // Unrank k into (i, j) with i < j, row-major over the upper triangle.
        let mut i = 0usize;
        let mut remaining = k;
        loop {
            let row = n - 1 - i;
            if remaining < row {
                return (i, i + 1 + remaining);
            }
            remaining -= row;
            i += 1;
        }
    };
    let values: Vec<f64> = if total <= max_pairs {
        (0..total)
            .map(|k| {
                let (i, j) = pair_of(k);
                cosine(&embeddings[i], &embeddings[j])
            })
            .collect()
    } else {
        let mut rng = rng_for(seed, &["caption-pairs"]);
        let mut chosen = HashSet::with_capacity(max_pairs);
        while chosen.len() < max_pairs {
            chosen.insert(rng.gen_range(0..total));
        }
        chosen
            .into_iter()
            .map(|k| {
                let (i, j) = pair_of(k);
                cosine(&embeddings[i], &embeddings[j])
            })
            .collect()
    };
    Ok(sorted_mean(values))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QaRow {
    pub method: String,
    pub image_caption_consistency: f64,
    pub caption_caption_similarity: f64,
    pub n_records: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QaReport {
    pub rows: Vec<QaRow>,
    pub config_hash: String,
}

/// Computes both QA metrics for the raw and post-processed caption variants.
pub fn qa_report(
    dataset: &Dataset,
    embedder: &dyn JointEmbedderAdapter,
    max_pairs: usize,
    seed: u64,
    config_hash: &str,
) -> Result<QaReport, DatasetError> {
    let mut rows = Vec::new();
    for (label, use_enriched) in [
        (dataset.meta.captioner.clone(), false),
        (format!("{}(post-processed)", dataset.meta.captioner), true),
    ] {
        let captions: Vec<String> = dataset
            .records
            .iter()
            .map(|r| {
                if use_enriched {
                    r.enriched_caption.clone()
                } else {
                    r.raw_caption.clone()
                }
            })
            .collect();
        rows.push(QaRow {
            method: label,
            image_caption_consistency: image_caption_consistency(dataset, embedder, use_enriched)?,
            caption_caption_similarity: caption_caption_similarity(
                &captions, embedder, max_pairs, seed,
            )?,
            n_records: dataset.records.len(),
        });
    }
    Ok(QaReport {
        rows,
        config_hash: config_hash.to_string(),
    })
}

/// Renders the QA report as an aligned table: one row per adapter variant.
pub fn render_qa_table(report: &QaReport) -> String {
    let mut table = vec![vec![
        "Dataset Processing Method".to_string(),
        format!(
            "{}{}",
            IMAGE_CAPTION_CONSISTENCY,
            direction_arrow(IMAGE_CAPTION_CONSISTENCY)
        ),
        format!(
            "{}{}",
            CAPTION_CAPTION_SIMILARITY,
            direction_arrow(CAPTION_CAPTION_SIMILARITY)
        ),
    ]];
    for row in &report.rows {
        table.push(vec![
            row.method.clone(),
            format!("{:.3}", row.image_caption_consistency),
            format!("{:.3}", row.caption_caption_similarity),
        ]);
    }
    let widths: Vec<usize> = (0..3)
        .map(|c| table.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in table.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<width$}", width = w))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 4));
            out.push('\n');
        }
    }
    out
}
