//! The three-stage pipeline: mean gesture feature -> per-pair embedding
//! optimization -> backend fine-tuning, with artifact-presence resume.
//!
//! Reruns with an identical resolved config land in the same run directory
//! and reuse completed stages byte-for-byte.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use crate::artifacts::{config_hash, load_tensor, save_tensor, RunDirs};
use crate::dataset::{Dataset, DatasetRecord, Split};
use crate::diffusion::{
    ddim_sample, load_checkpoint, save_checkpoint, DiffusionBackend, NoiseSchedule, ToyBackend,
};
use crate::embedding::{EmbeddingMatrix, OptimizedEmbedding};
use crate::encoder::TextEncoderAdapter;
use crate::error::TrainError;
use crate::fusion::{build_double_fused, FusionConfig, GestureBundle, ProjectionWeights};
use crate::gesture::mean_gesture_feature;
use crate::img::{load_png, Image};
use crate::rng::derive_seed;
use crate::training::config::PipelineConfig;
use crate::training::manifest::{
    FailureInfo, RunManifest, Stage1Info, Stage2Info, Stage3Info, StageStatus,
};
use crate::training::stages::{
    epoch_means_across_pairs, finetune_backend, optimize_all_embeddings, Stage2Settings,
    Stage3Settings,
};
use crate::training::TrainingPair;

/// How far to run the pipeline (testing and resume checks).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageLimit {
    Bundle,
    Embeddings,
    Full,
}

/// A completed (or partially completed) run.
pub struct PipelineOutcome {
    pub manifest: RunManifest,
    pub dirs: RunDirs,
}

/// Training pairs for one gesture's train split, sorted by pair id. An
/// optional cap subsamples deterministically by seeded hash rank.
pub fn load_training_pairs(
    dataset: &Dataset,
    gesture_id: &str,
    train_size: Option<usize>,
    seed: u64,
) -> Result<Vec<TrainingPair>, TrainError> {
    let mut records: Vec<&DatasetRecord> = dataset.records_for(gesture_id, Split::Train);
    if records.is_empty() {
        return Err(TrainError::NoRecords {
            gesture: gesture_id.to_string(),
            split: "train".to_string(),
        });
    }
    if let Some(cap) = train_size {
        if cap < records.len() {
            records.sort_by_key(|r| {
                (
                    derive_seed(seed, &["train-subsample", &r.pair_id]),
                    r.pair_id.clone(),
                )
            });
            records.truncate(cap);
        }
    }
    records.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    records
        .into_iter()
        .map(|r| {
            let image = load_png(&dataset.image_path(r)).map_err(TrainError::Tensor)?;
            Ok(TrainingPair {
                pair_id: r.pair_id.clone(),
                image,
                caption: r.enriched_caption.clone(),
                gesture_id: r.gesture_id.clone(),
                optimized_embedding_path: None,
            })
        })
        .collect()
}

fn record_failure(
    manifest: &mut RunManifest,
    dirs: &RunDirs,
    stage: &str,
    err: TrainError,
) -> TrainError {
    manifest.failure = Some(FailureInfo {
        stage: stage.to_string(),
        message: err.to_string(),
    });
    if let Err(save_err) = manifest.save(&dirs.manifest_path()) {
        log::error!("could not record failure in manifest: {save_err}");
    }
    err
}

fn bundle_complete(dir: &Path) -> bool {
    ["bundle.json", "mean_feature.tsr", "projection.tsr"]
        .iter()
        .all(|f| dir.join(f).exists())
}

/// Runs the pipeline end to end.
pub fn run_pipeline(config: &PipelineConfig, runs_base: &Path) -> Result<PipelineOutcome, TrainError> {
    run_pipeline_until(config, runs_base, StageLimit::Full)
}

/// Runs the pipeline up to `limit`, persisting artifacts and the manifest
/// after every stage; completed stages found on disk are reused.
pub fn run_pipeline_until(
    config: &PipelineConfig,
    runs_base: &Path,
    limit: StageLimit,
) -> Result<PipelineOutcome, TrainError> {
    let dataset = Dataset::load(&config.dataset_dir)?;
    let resolved = config.resolved(&dataset)?;
    let hash = config_hash(&resolved)?;
    let dirs = RunDirs::for_config_hash(runs_base, &hash);
    dirs.ensure()?;

    let fingerprint = dataset.fingerprint()?;
    let mut manifest = match RunManifest::load(&dirs.manifest_path()) {
        Ok(m) if m.config_hash == hash && m.dataset_fingerprint == fingerprint => {
            let mut m = m;
            m.failure = None;
            m
        }
        _ => RunManifest::new(resolved.clone(), hash.clone(), fingerprint),
    };

    let pairs = match load_training_pairs(
        &dataset,
        &resolved.gesture_id,
        resolved.train_size,
        resolved.seed,
    ) {
        Ok(p) => p,
        Err(e) => return Err(record_failure(&mut manifest, &dirs, "load", e)),
    };
    manifest.n_train_pairs = pairs.len();

    let encoder = resolved.make_encoder().map_err(TrainError::Config)?;
    let schedule = resolved
        .schedule
        .build()
        .map_err(TrainError::Diffusion)?;

    // Stage I: mean gesture feature + frozen projection, packaged as a bundle.
    let bundle = match run_stage1(&resolved, &dirs, &pairs, encoder.as_ref(), &mut manifest) {
        Ok(b) => b,
        Err(e) => return Err(record_failure(&mut manifest, &dirs, "stage1", e)),
    };
    if limit == StageLimit::Bundle {
        manifest.save(&dirs.manifest_path())?;
        return Ok(PipelineOutcome { manifest, dirs });
    }

    // The initial backend shared by Stage II (frozen) and Stage III (trained).
    let mut backend = ToyBackend::new(resolved.backend_config());

    // Stage II: one optimized embedding per training pair.
    let embeddings = match run_stage2(
        &resolved,
        &dirs,
        &pairs,
        &bundle,
        &mut backend,
        encoder.as_ref(),
        &schedule,
        &mut manifest,
    ) {
        Ok(e) => e,
        Err(e) => return Err(record_failure(&mut manifest, &dirs, "stage2", e)),
    };
    if limit == StageLimit::Embeddings {
        manifest.save(&dirs.manifest_path())?;
        return Ok(PipelineOutcome { manifest, dirs });
    }

    // Stage III: fine-tune the backend on frozen embeddings.
    if let Err(e) = run_stage3(
        &resolved,
        &dirs,
        &pairs,
        &bundle,
        &embeddings,
        &mut backend,
        &schedule,
        &mut manifest,
    ) {
        return Err(record_failure(&mut manifest, &dirs, "stage3", e));
    }

    manifest.save(&dirs.manifest_path())?;
    Ok(PipelineOutcome { manifest, dirs })
}

fn run_stage1(
    config: &PipelineConfig,
    dirs: &RunDirs,
    pairs: &[TrainingPair],
    encoder: &dyn TextEncoderAdapter,
    manifest: &mut RunManifest,
) -> Result<GestureBundle, TrainError> {
    let bundle_dir = dirs.bundle_dir();
    if manifest.stage1.is_some() && bundle_complete(&bundle_dir) {
        let bundle = GestureBundle::load(&bundle_dir).map_err(TrainError::Fusion)?;
        if let Some(info) = manifest.stage1.as_mut() {
            info.status = StageStatus::Reused;
        }
        log::info!("stage1: reusing bundle from {}", bundle_dir.display());
        return Ok(bundle);
    }
    let started = Instant::now();
    let recognizer = config.make_recognizer().map_err(TrainError::Config)?;
    let images: Vec<Image> = pairs.iter().map(|p| p.image.clone()).collect();
    let mean = mean_gesture_feature(
        &config.gesture_id,
        &images,
        recognizer.as_ref(),
        config.stage1.confidence_floor,
    )?;
    let projection = ProjectionWeights::seeded(encoder.d_text(), mean.dim(), config.seed);
    let fusion = FusionConfig::new(config.lambda, config.mu.unwrap_or(config.lambda))
        .map_err(TrainError::Fusion)?;
    let bundle = GestureBundle::new(
        config.gesture_id.clone(),
        mean,
        projection,
        fusion,
        config.seed,
    )
    .map_err(TrainError::Fusion)?;
    bundle.save(&bundle_dir).map_err(TrainError::Fusion)?;
    manifest.stage1 = Some(Stage1Info {
        status: StageStatus::Completed,
        wall_ms: started.elapsed().as_millis() as u64,
        n_source_images: bundle.mean_feature.n_source_images(),
        d_gesture: bundle.mean_feature.dim(),
        mean_feature_hash: bundle.mean_feature.tensor().content_hash(),
        projection_hash: bundle.projection.content_hash(),
    });
    manifest.save(&dirs.manifest_path())?;
    Ok(bundle)
}

#[allow(clippy::too_many_arguments)]
fn run_stage2(
    config: &PipelineConfig,
    dirs: &RunDirs,
    pairs: &[TrainingPair],
    bundle: &GestureBundle,
    backend: &mut ToyBackend,
    encoder: &dyn TextEncoderAdapter,
    schedule: &NoiseSchedule,
    manifest: &mut RunManifest,
) -> Result<BTreeMap<String, OptimizedEmbedding>, TrainError> {
    let embeddings_dir = dirs.embeddings_dir();
    let all_present = pairs
        .iter()
        .all(|p| embeddings_dir.join(format!("{}.tsr", p.pair_id)).exists());
    if let (Some(info), true) = (manifest.stage2.as_ref(), all_present) {
        // Reuse: load the persisted embeddings and re-verify their hashes.
        let expected: BTreeMap<&str, &str> = info
            .pairs
            .iter()
            .map(|p| (p.pair_id.as_str(), p.embedding_hash.as_str()))
            .collect();
        let mut out = BTreeMap::new();
        for pair in pairs {
            let path = embeddings_dir.join(format!("{}.tsr", pair.pair_id));
            let tensor = load_tensor(&path)?;
            let matrix = EmbeddingMatrix::new(tensor)?;
            let emb = OptimizedEmbedding::unfrozen(&pair.pair_id, matrix).freeze();
            match expected.get(pair.pair_id.as_str()) {
                Some(&h) if h == emb.matrix().content_hash() => {}
                _ => {
                    return Err(TrainError::Manifest(format!(
                        "persisted embedding for {} does not match the manifest hash",
                        pair.pair_id
                    )))
                }
            }
            out.insert(pair.pair_id.clone(), emb);
        }
        if let Some(info) = manifest.stage2.as_mut() {
            info.status = StageStatus::Reused;
        }
        log::info!("stage2: reusing {} embeddings", out.len());
        return Ok(out);
    }

    let started = Instant::now();
    backend.train_mode(false);
    let hash_start = backend.param_hash();
    let settings = Stage2Settings {
        epochs: config.stage2.epochs,
        lr: config.stage2.lr,
        samples_per_epoch: config.stage2.samples_per_epoch,
        lambda: config.lambda,
        grad_clip_norm: config.grad_clip_norm,
        seed: config.seed,
    };
    let outcomes =
        optimize_all_embeddings(pairs, bundle, backend, encoder, schedule, &settings)?;
    let hash_end = backend.param_hash();
    backend.train_mode(true);
    if hash_start != hash_end {
        return Err(TrainError::FreezeViolation {
            what: "backend parameters".to_string(),
            stage: "stage2".to_string(),
            before: hash_start,
            after: hash_end,
        });
    }

    let mut out = BTreeMap::new();
    let mut records = Vec::with_capacity(outcomes.len());
    let epoch_mean_losses = epoch_means_across_pairs(&outcomes);
    for outcome in outcomes {
        let path = embeddings_dir.join(format!("{}.tsr", outcome.embedding.pair_id()));
        save_tensor(&path, outcome.embedding.matrix().tensor())?;
        records.push(outcome.record);
        out.insert(outcome.embedding.pair_id().to_string(), outcome.embedding);
    }
    manifest.stage2 = Some(Stage2Info {
        status: StageStatus::Completed,
        wall_ms: started.elapsed().as_millis() as u64,
        backend_hash_start: hash_start,
        backend_hash_end: hash_end,
        epoch_mean_losses,
        pairs: records,
    });
    manifest.save(&dirs.manifest_path())?;
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn run_stage3(
    config: &PipelineConfig,
    dirs: &RunDirs,
    pairs: &[TrainingPair],
    bundle: &GestureBundle,
    embeddings: &BTreeMap<String, OptimizedEmbedding>,
    backend: &mut ToyBackend,
    schedule: &NoiseSchedule,
    manifest: &mut RunManifest,
) -> Result<(), TrainError> {
    let final_dir = dirs.checkpoints_dir().join("final");
    if manifest.stage3.is_some() && final_dir.join("manifest.json").exists() {
        if let Some(info) = manifest.stage3.as_mut() {
            info.status = StageStatus::Reused;
        }
        log::info!("stage3: reusing checkpoint at {}", final_dir.display());
        return Ok(());
    }
    let started = Instant::now();
    let projection_hash_before = bundle.projection.content_hash();
    let settings = Stage3Settings {
        epochs: config.stage3.epochs,
        lr: config.stage3.lr,
        batch_size: config.stage3.batch_size,
        grad_clip_norm: config.grad_clip_norm,
        seed: config.seed,
    };
    let last_dir = dirs.checkpoints_dir().join("last");
    let outcome = finetune_backend(
        pairs,
        embeddings,
        backend,
        schedule,
        &config.schedule,
        &settings,
        Some(&last_dir),
    )?;
    save_checkpoint(&final_dir, backend, &config.schedule).map_err(TrainError::Diffusion)?;

    // The frozen projection must also survive training untouched.
    let projection_hash_end = bundle.projection.content_hash();
    if projection_hash_end != projection_hash_before {
        return Err(TrainError::FreezeViolation {
            what: "projection weights".to_string(),
            stage: "stage3".to_string(),
            before: projection_hash_before,
            after: projection_hash_end,
        });
    }

    manifest.stage3 = Some(Stage3Info {
        status: StageStatus::Completed,
        wall_ms: started.elapsed().as_millis() as u64,
        param_hash_start: outcome.param_hash_start,
        param_hash_end: outcome.param_hash_end,
        epoch_mean_losses: outcome.epoch_mean_losses,
        embedding_hashes_start: outcome.embedding_hashes_start,
        embedding_hashes_end: outcome.embedding_hashes_end,
        projection_hash_end,
        checkpoint: final_dir,
    });
    manifest.save(&dirs.manifest_path())?;
    Ok(())
}

/// Inference-time generation: build the double-fused embedding for the
/// prompt from the stored bundle and sample from a loaded checkpoint.
pub fn generate(
    prompt: &str,
    bundle: &GestureBundle,
    checkpoint_dir: &Path,
    mu: f32,
    seed: u64,
    n_infer_steps: usize,
    encoder: &dyn TextEncoderAdapter,
) -> Result<Image, TrainError> {
    let (backend, schedule_cfg) = load_checkpoint(checkpoint_dir).map_err(TrainError::Diffusion)?;
    let schedule = schedule_cfg.build().map_err(TrainError::Diffusion)?;
    generate_with_backend(prompt, bundle, &backend, &schedule, mu, seed, n_infer_steps, encoder)
}

/// Generation against an already-loaded backend (for sampling loops).
#[allow(clippy::too_many_arguments)]
pub fn generate_with_backend(
    prompt: &str,
    bundle: &GestureBundle,
    backend: &dyn DiffusionBackend,
    schedule: &NoiseSchedule,
    mu: f32,
    seed: u64,
    n_infer_steps: usize,
    encoder: &dyn TextEncoderAdapter,
) -> Result<Image, TrainError> {
    let e_d = build_double_fused(prompt, bundle, encoder, mu).map_err(TrainError::Fusion)?;
    ddim_sample(
        backend,
        &e_d.matrix().to_f64(),
        schedule,
        n_infer_steps,
        seed,
    )
    .map_err(TrainError::Diffusion)
}
