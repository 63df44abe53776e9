//! Metric reports: named metric values with sample counts and a config hash.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::EvalError;

pub const FID: &str = "FID";
pub const KID: &str = "KID";
pub const FID_H: &str = "FID-H";
pub const KID_H: &str = "KID-H";
pub const HAND_CONF: &str = "HAND-CONF";
pub const IMAGE_CAPTION_CONSISTENCY: &str = "Image-Caption Consistency";
pub const CAPTION_CAPTION_SIMILARITY: &str = "Caption-Caption Similarity";

/// Column order for human-readable tables.
pub const TABLE_ORDER: [&str; 5] = [FID, KID, FID_H, KID_H, HAND_CONF];

/// Direction arrow for a metric: lower-is-better metrics get a down arrow.
pub fn direction_arrow(name: &str) -> &'static str {
    match name {
        FID | KID | FID_H | KID_H | CAPTION_CAPTION_SIMILARITY => "\u{2193}",
        _ => "\u{2191}",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub value: f64,
    pub n_real: usize,
    pub n_generated: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excluded_real: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excluded_generated: Option<usize>,
}

impl MetricEntry {
    pub fn new(value: f64, n_real: usize, n_generated: usize) -> Self {
        Self {
            value,
            n_real,
            n_generated,
            excluded_real: None,
            excluded_generated: None,
        }
    }
}

/// Named metric values for one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metrics: BTreeMap<String, MetricEntry>,
    pub config_hash: String,
}

impl MetricReport {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Self {
            metrics: BTreeMap::new(),
            config_hash: config_hash.into(),
        }
    }

    /// Inserts a metric, enforcing its range invariant when one exists.
    pub fn insert(&mut self, name: &str, entry: MetricEntry) -> Result<(), EvalError> {
        let ok = match name {
            FID | FID_H => entry.value >= 0.0,
            HAND_CONF => (0.0..=1.0).contains(&entry.value),
            IMAGE_CAPTION_CONSISTENCY | CAPTION_CAPTION_SIMILARITY => {
                (-1.0..=1.0).contains(&entry.value)
            }
            _ => entry.value.is_finite(),
        };
        if !ok || !entry.value.is_finite() {
            return Err(EvalError::MetricRange {
                name: name.to_string(),
                value: entry.value,
            });
        }
        self.metrics.insert(name.to_string(), entry);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&MetricEntry> {
        self.metrics.get(name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).map(|e| e.value)
    }
}

/// Renders labelled reports as an aligned text table in the canonical
/// column order (FID, KID, FID-H, KID-H, HAND-CONF).
pub fn render_metric_table(rows: &[(String, &MetricReport)]) -> String {
    let mut header: Vec<String> = vec!["Method".to_string()];
    for name in TABLE_ORDER {
        header.push(format!("{name}{}", direction_arrow(name)));
    }
    let mut table: Vec<Vec<String>> = vec![header];
    for (label, report) in rows {
        let mut row = vec![label.clone()];
        for name in TABLE_ORDER {
            row.push(match report.value(name) {
                Some(v) => format!("{v:.3}"),
                None => "-".to_string(),
            });
        }
        table.push(row);
    }
    let widths: Vec<usize> = (0..table[0].len())
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
            let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}
