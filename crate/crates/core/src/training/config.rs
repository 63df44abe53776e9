//! The run-config file schema and its resolution into fully-defaulted form.
//!
//! Unknown keys are rejected; the resolved config (all defaults applied) is
//! what gets hashed into the run directory name.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::diffusion::{ScheduleConfig, ScheduleKind, ToyBackendConfig};
use crate::encoder::{FixtureTextEncoder, RemoteTextEncoder, TextEncoderAdapter};
use crate::error::ConfigError;
use crate::gesture::{GestureRecognizerAdapter, GlyphOracleRecognizer, RemoteRecognizer};
use crate::remote::resolve_url;
use crate::rng::derive_seed;

pub const DEFAULT_LAMBDA: f32 = 0.7;
pub const DEFAULT_N_INFER_STEPS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage1Section {
    /// "glyph_oracle" or "remote".
    pub recognizer: String,
    pub confidence_floor: f32,
    /// Base URL for the remote recognizer (env var override applies).
    pub remote_url: Option<String>,
    /// Feature dimension, required for the remote recognizer.
    pub d_gesture: Option<usize>,
}

impl Default for Stage1Section {
    fn default() -> Self {
        Self {
            recognizer: "glyph_oracle".to_string(),
            confidence_floor: crate::gesture::DEFAULT_CONFIDENCE_FLOOR,
            remote_url: None,
            d_gesture: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage2Section {
    pub epochs: usize,
    pub lr: f64,
    pub samples_per_epoch: usize,
}

impl Default for Stage2Section {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 1e-3,
            samples_per_epoch: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage3Section {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for Stage3Section {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 1e-6,
            batch_size: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendSection {
    /// Only "toy" is implemented in-process; a real latent-diffusion backend
    /// is documented as an out-of-process service.
    pub kind: String,
    pub channels: usize,
    /// Defaults to the dataset's image size.
    pub image_size: Option<usize>,
}

impl Default for BackendSection {
    fn default() -> Self {
        Self {
            kind: "toy".to_string(),
            channels: 16,
            image_size: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    /// "fixture" or "remote".
    pub kind: String,
    pub n_tokens: usize,
    pub d_text: usize,
    pub remote_url: Option<String>,
}

impl Default for EncoderSection {
    fn default() -> Self {
        Self {
            kind: "fixture".to_string(),
            n_tokens: 8,
            d_text: 32,
            remote_url: None,
        }
    }
}

fn default_schedule() -> ScheduleConfig {
    ScheduleConfig {
        kind: ScheduleKind::Cosine,
        n_steps: 100,
    }
}

fn default_lambda() -> f32 {
    DEFAULT_LAMBDA
}

fn default_clip() -> Option<f64> {
    Some(1.0)
}

fn default_n_infer() -> usize {
    DEFAULT_N_INFER_STEPS
}

/// One training run: one gesture, one backend, three stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub dataset_dir: PathBuf,
    pub gesture_id: String,
    #[serde(default = "default_lambda")]
    pub lambda: f32,
    /// Inference blend coefficient; defaults to lambda.
    #[serde(default)]
    pub mu: Option<f32>,
    #[serde(default)]
    pub stage1: Stage1Section,
    #[serde(default)]
    pub stage2: Stage2Section,
    #[serde(default)]
    pub stage3: Stage3Section,
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default = "default_schedule")]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub encoder: EncoderSection,
    #[serde(default = "default_n_infer")]
    pub n_infer_steps: usize,
    /// Optional cap on the number of training pairs (seeded subsample).
    #[serde(default)]
    pub train_size: Option<usize>,
    /// Global-norm gradient clip; null disables it entirely.
    #[serde(default = "default_clip")]
    pub grad_clip_norm: Option<f64>,
    pub seed: u64,
}

impl PipelineConfig {
    /// Minimal config with defaults everywhere.
    pub fn new(dataset_dir: impl Into<PathBuf>, gesture_id: impl Into<String>, seed: u64) -> Self {
        Self {
            dataset_dir: dataset_dir.into(),
            gesture_id: gesture_id.into(),
            lambda: DEFAULT_LAMBDA,
            mu: None,
            stage1: Stage1Section::default(),
            stage2: Stage2Section::default(),
            stage3: Stage3Section::default(),
            backend: BackendSection::default(),
            schedule: default_schedule(),
            encoder: EncoderSection::default(),
            n_infer_steps: DEFAULT_N_INFER_STEPS,
            train_size: None,
            grad_clip_norm: default_clip(),
            seed: 0,
        }
        .with_seed(seed)
    }

    fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Applies remaining defaults (mu, backend image size) and validates every
    /// field. The result is the hashable run identity.
    pub fn resolved(&self, dataset: &Dataset) -> Result<PipelineConfig, ConfigError> {
        let mut out = self.clone();
        if out.mu.is_none() {
            out.mu = Some(out.lambda);
        }
        if out.backend.image_size.is_none() {
            let size = if dataset.meta.image_size > 0 {
                dataset.meta.image_size
            } else {
                16
            };
            out.backend.image_size = Some(size);
        }
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));
        if !(0.0..=1.0).contains(&self.lambda) {
            return invalid(format!("lambda {} outside [0,1]", self.lambda));
        }
        if let Some(mu) = self.mu {
            if !(0.0..=1.0).contains(&mu) {
                return invalid(format!("mu {mu} outside [0,1]"));
            }
        }
        if self.stage2.lr <= 0.0 || self.stage3.lr <= 0.0 {
            return invalid("learning rates must be positive".to_string());
        }
        if self.stage2.samples_per_epoch < 1 {
            return invalid("stage2.samples_per_epoch must be >= 1".to_string());
        }
        if self.stage3.batch_size < 1 {
            return invalid("stage3.batch_size must be >= 1".to_string());
        }
        if self.backend.kind != "toy" {
            return invalid(format!(
                "backend kind {:?} is not available in-process (only \"toy\")",
                self.backend.kind
            ));
        }
        if self.schedule.n_steps < 1 {
            return invalid("schedule.n_steps must be >= 1".to_string());
        }
        if self.n_infer_steps < 1 || self.n_infer_steps > self.schedule.n_steps {
            return invalid(format!(
                "n_infer_steps {} outside [1, {}]",
                self.n_infer_steps, self.schedule.n_steps
            ));
        }
        if self.stage1.recognizer == "remote" && self.stage1.d_gesture.is_none() {
            return invalid("stage1.d_gesture is required for the remote recognizer".to_string());
        }
        match self.stage1.recognizer.as_str() {
            "glyph_oracle" | "remote" => {}
            other => return invalid(format!("unknown recognizer {other:?}")),
        }
        match self.encoder.kind.as_str() {
            "fixture" | "remote" => {}
            other => return invalid(format!("unknown encoder {other:?}")),
        }
        if self.gesture_id.is_empty() {
            return invalid("gesture_id must be non-empty".to_string());
        }
        Ok(())
    }

    /// Loads a config from a JSON file, rejecting unknown keys.
    pub fn from_json_file(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Backend construction parameters; the init seed is derived from the run
    /// seed so Stage II and Stage III share one initial model.
    pub fn backend_config(&self) -> ToyBackendConfig {
        let size = self.backend.image_size.unwrap_or(16);
        ToyBackendConfig {
            height: size,
            width: size,
            channels: self.backend.channels,
            d_text: self.encoder.d_text,
            seed: derive_seed(self.seed, &["backend-init"]),
        }
    }

    pub fn make_encoder(&self) -> Result<Box<dyn TextEncoderAdapter>, ConfigError> {
        match self.encoder.kind.as_str() {
            "fixture" => Ok(Box::new(FixtureTextEncoder::new(
                self.encoder.n_tokens,
                self.encoder.d_text,
            ))),
            "remote" => {
                let url = resolve_url("encoder", self.encoder.remote_url.as_deref())
                    .ok_or_else(|| {
                        ConfigError::Invalid(
                            "remote encoder needs encoder.remote_url or \
                             HANDFUSION_ADAPTER_ENCODER_URL"
                                .to_string(),
                        )
                    })?;
                Ok(Box::new(RemoteTextEncoder::new(
                    url,
                    self.encoder.n_tokens,
                    self.encoder.d_text,
                )))
            }
            other => Err(ConfigError::Invalid(format!("unknown encoder {other:?}"))),
        }
    }

    pub fn make_recognizer(&self) -> Result<Box<dyn GestureRecognizerAdapter>, ConfigError> {
        match self.stage1.recognizer.as_str() {
            "glyph_oracle" => Ok(Box::new(GlyphOracleRecognizer::default())),
            "remote" => {
                let url = resolve_url("recognizer", self.stage1.remote_url.as_deref())
                    .ok_or_else(|| {
                        ConfigError::Invalid(
                            "remote recognizer needs stage1.remote_url or \
                             HANDFUSION_ADAPTER_RECOGNIZER_URL"
                                .to_string(),
                        )
                    })?;
                let d = self.stage1.d_gesture.ok_or_else(|| {
                    ConfigError::Invalid("remote recognizer needs stage1.d_gesture".to_string())
                })?;
                Ok(Box::new(RemoteRecognizer::new(url, d)))
            }
            other => Err(ConfigError::Invalid(format!(
                "unknown recognizer {other:?}"
            ))),
        }
    }
}
