//! Training orchestration: Stage II embedding optimization with a frozen
//! backend, Stage III backend fine-tuning with frozen embeddings, the
//! end-to-end pipeline with resume, inference, and the ablation sweeps.

pub mod ablate;
pub mod config;
pub mod manifest;
pub mod optimizer;
pub mod pipeline;
pub mod stages;

use std::path::PathBuf;

use crate::img::Image;

pub use ablate::{ablate_lambda, ablate_trainsize, evaluate_run, RunEvalSetup, SweepPoint};
pub use config::{
    BackendSection, EncoderSection, PipelineConfig, Stage1Section, Stage2Section, Stage3Section,
};
pub use manifest::{PairOptimization, RunManifest, Stage1Info, Stage2Info, Stage3Info, StageStatus};
pub use pipeline::{
    generate, generate_with_backend, load_training_pairs, run_pipeline, run_pipeline_until,
    PipelineOutcome, StageLimit,
};
pub use stages::{
    finetune_backend, optimize_all_embeddings, optimize_embedding, FinetuneOutcome, PairOutcome,
    Stage2Settings, Stage3Settings,
};

/// A text-image training pair for one gesture.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub pair_id: String,
    /// Float image in [0, 1]; dimensions must match the backend resolution.
    pub image: Image,
    /// The enriched caption.
    pub caption: String,
    pub gesture_id: String,
    /// Artifact reference, set once Stage II has persisted the embedding.
    pub optimized_embedding_path: Option<PathBuf>,
}
