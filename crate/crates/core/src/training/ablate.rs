//! Run-level evaluation and the two ablation sweeps (blend coefficient and
//! training-set size).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::artifacts::MetricReport;
use crate::dataset::{Dataset, Split};
use crate::diffusion::load_checkpoint;
use crate::error::Error;
use crate::eval::{evaluate_sets, DownsampleExtractor, EvalOptions};
use crate::fusion::GestureBundle;
use crate::img::{load_png, save_png, Image};
use crate::rng::derive_seed;
use crate::training::config::PipelineConfig;
use crate::training::pipeline::{generate_with_backend, run_pipeline};

/// How a run is evaluated after training: how many images to sample and the
/// metric options.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunEvalSetup {
    pub n_generate: usize,
    pub eval: EvalOptions,
    /// Grid for the downsample feature extractor.
    pub extractor_grid: usize,
}

impl Default for RunEvalSetup {
    fn default() -> Self {
        Self {
            n_generate: 50,
            eval: EvalOptions::default(),
            extractor_grid: 4,
        }
    }
}

/// Trains (or resumes) a run, samples images from test prompts, and scores
/// them against the gesture's real test images. Samples and the metric
/// report are persisted under the run directory.
pub fn evaluate_run(
    config: &PipelineConfig,
    runs_base: &Path,
    setup: &RunEvalSetup,
) -> Result<MetricReport, Error> {
    let outcome = run_pipeline(config, runs_base)?;
    let dirs = &outcome.dirs;
    let dataset = Dataset::load(&config.dataset_dir)?;
    let resolved = config.resolved(&dataset)?;

    let mut test_records = dataset.records_for(&resolved.gesture_id, Split::Test);
    test_records.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    if test_records.is_empty() {
        return Err(Error::Train(crate::error::TrainError::NoRecords {
            gesture: resolved.gesture_id.clone(),
            split: "test".to_string(),
        }));
    }

    let bundle = GestureBundle::load(&dirs.bundle_dir()).map_err(crate::error::TrainError::Fusion)?;
    let checkpoint_dir = dirs.checkpoints_dir().join("final");
    let (backend, schedule_cfg) =
        load_checkpoint(&checkpoint_dir).map_err(crate::error::TrainError::Diffusion)?;
    let schedule = schedule_cfg.build().map_err(crate::error::TrainError::Diffusion)?;
    let encoder = resolved.make_encoder()?;
    let mu = resolved.mu.unwrap_or(resolved.lambda);

    // Sample from test prompts (round-robin) with derived per-image seeds;
    // existing sample files are reused since generation is deterministic.
    let samples_dir = dirs.samples_dir();
    let mut generated: Vec<Image> = Vec::with_capacity(setup.n_generate);
    for i in 0..setup.n_generate {
        let path = samples_dir.join(format!("gen_{i:04}.png"));
        if !path.exists() {
            let record = test_records[i % test_records.len()];
            let seed = derive_seed(resolved.seed, &["infer", &i.to_string()]);
            let image = generate_with_backend(
                &record.enriched_caption,
                &bundle,
                &backend,
                &schedule,
                mu,
                seed,
                resolved.n_infer_steps,
                encoder.as_ref(),
            )?;
            save_png(&path, &image).map_err(crate::error::TrainError::Tensor)?;
        }
        generated.push(load_png(&path).map_err(crate::error::TrainError::Tensor)?);
    }

    let real: Result<Vec<Image>, _> = test_records
        .iter()
        .map(|r| load_png(&dataset.image_path(r)))
        .collect();
    let real = real.map_err(crate::error::TrainError::Tensor)?;

    let detector = resolved.make_recognizer()?;
    let extractor = DownsampleExtractor::new(setup.extractor_grid);
    let report = evaluate_sets(
        &real,
        &generated,
        detector.as_ref(),
        &extractor,
        &setup.eval,
        &outcome.manifest.config_hash,
    )?;

    let report_path = dirs.reports_dir().join("metrics.json");
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| crate::error::TrainError::Manifest(e.to_string()))?;
    std::fs::write(&report_path, json).map_err(|source| crate::error::TrainError::Io {
        path: report_path,
        source,
    })?;
    Ok(report)
}

/// One point of a sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub parameter: f64,
    pub report: Option<MetricReport>,
    pub error: Option<String>,
    pub run_dir: PathBuf,
}

fn run_point(config: &PipelineConfig, runs_base: &Path, setup: &RunEvalSetup, parameter: f64) -> SweepPoint {
    let run_dir = config
        .resolved_run_dir(runs_base)
        .unwrap_or_else(|| runs_base.to_path_buf());
    match evaluate_run(config, runs_base, setup) {
        Ok(report) => SweepPoint {
            parameter,
            report: Some(report),
            error: None,
            run_dir,
        },
        Err(e) => {
            log::error!("sweep point {parameter} failed: {e}");
            SweepPoint {
                parameter,
                report: None,
                error: Some(e.to_string()),
                run_dir,
            }
        }
    }
}

/// Runs the pipeline once per blend coefficient; per-point failures are
/// recorded and the sweep continues.
pub fn ablate_lambda(
    base: &PipelineConfig,
    values: &[f32],
    runs_base: &Path,
    setup: &RunEvalSetup,
) -> Vec<SweepPoint> {
    values
        .iter()
        .map(|&lambda| {
            let mut config = base.clone();
            config.lambda = lambda;
            // The inference coefficient tracks lambda unless pinned.
            if base.mu.is_none() {
                config.mu = None;
            }
            run_point(&config, runs_base, setup, f64::from(lambda))
        })
        .collect()
}

/// Runs the pipeline once per training-set size.
pub fn ablate_trainsize(
    base: &PipelineConfig,
    sizes: &[usize],
    runs_base: &Path,
    setup: &RunEvalSetup,
) -> Vec<SweepPoint> {
    sizes
        .iter()
        .map(|&size| {
            let mut config = base.clone();
            config.train_size = Some(size);
            run_point(&config, runs_base, setup, size as f64)
        })
        .collect()
}

impl PipelineConfig {
    /// Best-effort run directory for reporting (resolution needs the dataset;
    /// failures fall back to the base).
    fn resolved_run_dir(&self, runs_base: &Path) -> Option<PathBuf> {
        let dataset = Dataset::load(&self.dataset_dir).ok()?;
        let resolved = self.resolved(&dataset).ok()?;
        let hash = crate::artifacts::config_hash(&resolved).ok()?;
        Some(
            crate::artifacts::RunDirs::for_config_hash(runs_base, &hash)
                .root()
                .to_path_buf(),
        )
    }
}
