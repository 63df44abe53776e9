//! Stage II (per-pair embedding optimization against a frozen backend) and
//! Stage III (backend fine-tuning with frozen embeddings).
//!
//! Both stages enforce their freeze contracts by hashing: Stage II aborts if
//! the backend's parameters move; Stage III re-checks every optimized
//! embedding hash after training.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::diffusion::{
    reconstruction_loss_grads, save_checkpoint, DiffusionBackend, NoiseSchedule, ScheduleConfig,
    ToyBackend,
};
use crate::embedding::{EmbeddingMatrix, OptimizedEmbedding};
use crate::encoder::TextEncoderAdapter;
use crate::error::TrainError;
use crate::fusion::{build_double_fused, GestureBundle};
use crate::img::Image;
use crate::rng::rng_for;
use crate::training::manifest::PairOptimization;
use crate::training::optimizer::{clip_global_norm, Adam};
use crate::training::TrainingPair;

#[derive(Debug, Clone)]
pub struct Stage2Settings {
    pub epochs: usize,
    pub lr: f64,
    pub samples_per_epoch: usize,
    pub lambda: f32,
    pub grad_clip_norm: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Stage3Settings {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub grad_clip_norm: Option<f64>,
    pub seed: u64,
}

fn check_pair_image(pair: &TrainingPair, backend: &dyn DiffusionBackend) -> Result<(), TrainError> {
    let expected = backend.image_shape();
    if pair.image.shape() != expected {
        return Err(TrainError::Diffusion(
            crate::error::DiffusionError::ImageShape {
                expected,
                actual: pair.image.shape(),
            },
        ));
    }
    Ok(())
}

fn image_f64(image: &Image) -> Vec<f64> {
    image.data().iter().map(|&v| f64::from(v)).collect()
}

/// Uniform timestep within the sample's stratum of the schedule.
fn stratified_timestep(
    rng: &mut rand_chacha::ChaCha8Rng,
    n_steps: usize,
    sample: usize,
    samples_per_epoch: usize,
) -> usize {
    let lo = sample * n_steps / samples_per_epoch;
    let hi = ((sample + 1) * n_steps / samples_per_epoch).max(lo + 1).min(n_steps);
    rng.gen_range(lo..hi)
}

/// Round an f64 parameter buffer through f32. Keeping the live state
/// f32-representable makes hashes and persisted artifacts canonical.
fn round_through_f32(values: &mut [f64]) {
    for v in values.iter_mut() {
        *v = f64::from(*v as f32);
    }
}

/// One pair's Stage II result.
pub struct PairOutcome {
    pub embedding: OptimizedEmbedding,
    pub record: PairOptimization,
    pub epoch_losses: Vec<f64>,
}

/// Optimizes one pair's double-fused embedding against the frozen backend.
///
/// With zero epochs the initial double-fused embedding is returned exactly.
/// The backend's param hash is asserted unchanged; a change aborts the pair.
pub fn optimize_embedding(
    pair: &TrainingPair,
    bundle: &GestureBundle,
    backend: &dyn DiffusionBackend,
    encoder: &dyn TextEncoderAdapter,
    schedule: &NoiseSchedule,
    settings: &Stage2Settings,
) -> Result<PairOutcome, TrainError> {
    check_pair_image(pair, backend)?;
    let hash_before = backend.param_hash();
    let initial = build_double_fused(&pair.caption, bundle, encoder, settings.lambda)?;
    let matrix = initial.matrix();
    let (n_tokens, d_text) = (matrix.n_tokens(), matrix.d_text());

    if settings.epochs == 0 {
        let frozen = OptimizedEmbedding::unfrozen(&pair.pair_id, matrix.clone()).freeze();
        let record = PairOptimization {
            pair_id: pair.pair_id.clone(),
            initial_epoch_loss: None,
            final_epoch_loss: None,
            embedding_hash: frozen.matrix().content_hash(),
        };
        return Ok(PairOutcome {
            embedding: frozen,
            record,
            epoch_losses: Vec::new(),
        });
    }

    let mut e = matrix.to_f64();
    let x = image_f64(&pair.image);
    let mut rng = rng_for(settings.seed, &["stage2", &pair.pair_id]);
    let mut adam = Adam::new(e.len(), settings.lr);
    let mut epoch_losses = Vec::with_capacity(settings.epochs);

    for epoch in 0..settings.epochs {
        let mut epoch_loss = 0.0f64;
        for sample in 0..settings.samples_per_epoch {
            // Fresh (epsilon, t) per sample, with t stratified across the
            // epoch so successive epoch means are comparable.
            let t = stratified_timestep(&mut rng, schedule.n_steps(), sample, settings.samples_per_epoch);
            let eps: Vec<f64> = (0..x.len()).map(|_| rng.sample(StandardNormal)).collect();
            let out = reconstruction_loss_grads(backend, &x, &e, &eps, t, schedule)
                .map_err(TrainError::Diffusion)?;
            if !out.loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    stage: "stage2".to_string(),
                    pair_id: pair.pair_id.clone(),
                    epoch,
                });
            }
            epoch_loss += out.loss;
            let mut grads = out.econd_grads;
            if let Some(max_norm) = settings.grad_clip_norm {
                clip_global_norm(&mut grads, max_norm);
            }
            adam.step(&mut e, &grads);
            round_through_f32(&mut e);
        }
        epoch_losses.push(epoch_loss / settings.samples_per_epoch as f64);
    }

    let hash_after = backend.param_hash();
    if hash_after != hash_before {
        return Err(TrainError::FreezeViolation {
            what: "backend parameters".to_string(),
            stage: "stage2".to_string(),
            before: hash_before,
            after: hash_after,
        });
    }

    let final_matrix =
        EmbeddingMatrix::from_f64(n_tokens, d_text, &e).map_err(TrainError::Tensor)?;
    let frozen = OptimizedEmbedding::unfrozen(&pair.pair_id, final_matrix).freeze();
    let record = PairOptimization {
        pair_id: pair.pair_id.clone(),
        initial_epoch_loss: Some(epoch_losses[0]),
        final_epoch_loss: Some(*epoch_losses.last().expect("epochs >= 1")),
        embedding_hash: frozen.matrix().content_hash(),
    };
    Ok(PairOutcome {
        embedding: frozen,
        record,
        epoch_losses,
    })
}

/// Runs Stage II over all pairs. Pairs are independent (the backend is
/// frozen), so they fan out across the thread pool; per-pair seeding keeps
/// results identical regardless of parallelism.
pub fn optimize_all_embeddings(
    pairs: &[TrainingPair],
    bundle: &GestureBundle,
    backend: &dyn DiffusionBackend,
    encoder: &dyn TextEncoderAdapter,
    schedule: &NoiseSchedule,
    settings: &Stage2Settings,
) -> Result<Vec<PairOutcome>, TrainError> {
    pairs
        .par_iter()
        .map(|pair| optimize_embedding(pair, bundle, backend, encoder, schedule, settings))
        .collect()
}

/// Mean loss across pairs for each epoch.
pub fn epoch_means_across_pairs(outcomes: &[PairOutcome]) -> Vec<f64> {
    let epochs = outcomes.first().map_or(0, |o| o.epoch_losses.len());
    (0..epochs)
        .map(|e| {
            let total: f64 = outcomes.iter().map(|o| o.epoch_losses[e]).sum();
            total / outcomes.len() as f64
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub epoch_mean_losses: Vec<f64>,
    pub param_hash_start: String,
    pub param_hash_end: String,
    pub embedding_hashes_start: BTreeMap<String, String>,
    pub embedding_hashes_end: BTreeMap<String, String>,
}

/// Fine-tunes the backend on the optimized embeddings (Stage III).
///
/// Pairs are shuffled per epoch by seeded permutation; each sample draws a
/// fresh (epsilon, t). After every epoch the current parameters are written
/// to `last_checkpoint_dir`, so a divergence abort retains the last good
/// checkpoint.
pub fn finetune_backend(
    pairs: &[TrainingPair],
    embeddings: &BTreeMap<String, OptimizedEmbedding>,
    backend: &mut ToyBackend,
    schedule: &NoiseSchedule,
    schedule_cfg: &ScheduleConfig,
    settings: &Stage3Settings,
    last_checkpoint_dir: Option<&std::path::Path>,
) -> Result<FinetuneOutcome, TrainError> {
    // Every pair needs a frozen optimized embedding before training starts.
    let mut hashes_start = BTreeMap::new();
    for pair in pairs {
        let emb = embeddings
            .get(&pair.pair_id)
            .ok_or_else(|| TrainError::MissingEmbedding {
                pair_id: pair.pair_id.clone(),
            })?;
        if !emb.is_frozen() || !emb.verify_frozen() {
            return Err(TrainError::MissingEmbedding {
                pair_id: format!("{} (embedding not frozen)", pair.pair_id),
            });
        }
        check_pair_image(pair, backend)?;
        hashes_start.insert(pair.pair_id.clone(), emb.matrix().content_hash());
    }

    backend.train_mode(true);
    let param_hash_start = backend.param_hash();
    let images: Vec<Vec<f64>> = pairs.iter().map(|p| image_f64(&p.image)).collect();
    let conds: Vec<Vec<f64>> = pairs
        .iter()
        .map(|p| embeddings[&p.pair_id].matrix().to_f64())
        .collect();

    let mut params: Vec<f64> = backend.parameters().iter().map(|&v| f64::from(v)).collect();
    let mut adam = Adam::new(params.len(), settings.lr);
    let mut rng = rng_for(settings.seed, &["stage3"]);
    let mut epoch_mean_losses = Vec::with_capacity(settings.epochs);

    for epoch in 0..settings.epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        let mut n_samples = 0usize;
        for batch in order.chunks(settings.batch_size) {
            // Draw (t, eps) sequentially so parallel execution cannot change
            // the stream, then evaluate batch members concurrently.
            let draws: Vec<(usize, usize, Vec<f64>)> = batch
                .iter()
                .map(|&idx| {
                    let t = rng.gen_range(0..schedule.n_steps());
                    let eps: Vec<f64> = (0..images[idx].len())
                        .map(|_| rng.sample(StandardNormal))
                        .collect();
                    (idx, t, eps)
                })
                .collect();
            let results: Result<Vec<_>, _> = {
                let backend_ref: &ToyBackend = backend;
                draws
                    .par_iter()
                    .map(|(idx, t, eps)| {
                        reconstruction_loss_grads(
                            backend_ref,
                            &images[*idx],
                            &conds[*idx],
                            eps,
                            *t,
                            schedule,
                        )
                    })
                    .collect()
            };
            let results = results.map_err(TrainError::Diffusion)?;

            let mut grads = vec![0.0f64; params.len()];
            let mut batch_loss = 0.0f64;
            for out in &results {
                if !out.loss.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        stage: "stage3".to_string(),
                        pair_id: pairs[batch[0]].pair_id.clone(),
                        epoch,
                    });
                }
                batch_loss += out.loss;
                for (g, &pg) in grads.iter_mut().zip(&out.param_grads) {
                    *g += pg;
                }
            }
            let scale = 1.0 / results.len() as f64;
            for g in grads.iter_mut() {
                *g *= scale;
            }
            if let Some(max_norm) = settings.grad_clip_norm {
                clip_global_norm(&mut grads, max_norm);
            }
            adam.step(&mut params, &grads);
            round_through_f32(&mut params);
            let flat: Vec<f32> = params.iter().map(|&v| v as f32).collect();
            backend
                .set_parameters(&flat)
                .map_err(TrainError::Diffusion)?;
            epoch_loss += batch_loss;
            n_samples += results.len();
        }
        epoch_mean_losses.push(epoch_loss / n_samples.max(1) as f64);
        if let Some(dir) = last_checkpoint_dir {
            save_checkpoint(dir, backend, schedule_cfg).map_err(TrainError::Diffusion)?;
        }
    }

    // Freeze contract: embeddings must be bit-unchanged.
    let mut hashes_end = BTreeMap::new();
    for pair in pairs {
        let emb = &embeddings[&pair.pair_id];
        let hash = emb.matrix().content_hash();
        if Some(hash.as_str()) != emb.freeze_hash() {
            return Err(TrainError::FreezeViolation {
                what: format!("optimized embedding {}", pair.pair_id),
                stage: "stage3".to_string(),
                before: emb.freeze_hash().unwrap_or("<none>").to_string(),
                after: hash,
            });
        }
        hashes_end.insert(pair.pair_id.clone(), hash);
    }

    Ok(FinetuneOutcome {
        epoch_mean_losses,
        param_hash_start,
        param_hash_end: backend.param_hash(),
        embedding_hashes_start: hashes_start,
        embedding_hashes_end: hashes_end,
    })
}
