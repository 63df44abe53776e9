//! Error types shared across the crate.
//!
//! Each subsystem has its own enum so callers can match on the failure class
//! they care about; [`Error`] aggregates them for code that spans stages.

use std::path::PathBuf;

use thiserror::Error;

/// Errors from the tensor persistence layer.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("corrupt tensor header in {path}: {reason}")]
    CorruptHeader { path: PathBuf, reason: String },
    #[error("unsupported dtype {dtype:?} in {path} (only f32 is supported)")]
    UnsupportedDtype { path: PathBuf, dtype: String },
    #[error("unsupported byte order {order:?} in {path} (only little-endian is supported)")]
    UnsupportedByteOrder { path: PathBuf, order: String },
    #[error("format version {found} in {path} is newer than supported version {supported}")]
    UnsupportedVersion {
        path: PathBuf,
        found: u32,
        supported: u32,
    },
    #[error(
        "payload size mismatch in {path}: header shape {shape:?} needs {expected} bytes, found {actual}"
    )]
    SizeMismatch {
        path: PathBuf,
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("tensor contains non-finite values ({context})")]
    NonFinite { context: String },
    #[error("shape {shape:?} is inconsistent with {len} data elements")]
    ShapeMismatch { shape: Vec<usize>, len: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Errors from gesture feature extraction (Stage I).
#[derive(Debug, Error)]
pub enum GestureError {
    #[error("gesture recognizer adapter {name:?} failed: {reason}")]
    AdapterFailure { name: String, reason: String },
    #[error("no detections across {n_images} images; cannot form a mean gesture feature")]
    NoDetections { n_images: usize },
    #[error("adapter returned a {actual}-dim feature, expected {expected}")]
    FeatureDimMismatch { expected: usize, actual: usize },
    #[error("invalid detection from adapter {name:?}: {reason}")]
    InvalidDetection { name: String, reason: String },
}

/// Errors from embedding fusion (concat-project and linear blends).
#[derive(Debug, Error)]
pub enum FusionError {
    #[error(
        "projection dimension mismatch: weights map {w_in}->{w_out}, inputs need {need_in}->{need_out}"
    )]
    ProjectionDims {
        w_in: usize,
        w_out: usize,
        need_in: usize,
        need_out: usize,
    },
    #[error("embedding shape mismatch: [{a_rows}x{a_cols}] vs [{b_rows}x{b_cols}]")]
    ShapeMismatch {
        a_rows: usize,
        a_cols: usize,
        b_rows: usize,
        b_cols: usize,
    },
    #[error("fusion coefficient {coeff} outside [0, 1]")]
    CoeffRange { coeff: f32 },
    #[error("text encoder adapter {name:?} failed: {reason}")]
    EncoderFailure { name: String, reason: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Errors from the diffusion machinery (schedule, backend, sampler).
#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("unknown schedule kind {kind:?} (expected \"cosine\" or \"linear-beta\")")]
    UnknownScheduleKind { kind: String },
    #[error("schedule needs n_steps >= 1, got {n_steps}")]
    BadStepCount { n_steps: usize },
    #[error("timestep {t} out of range for a {n_steps}-step schedule")]
    TimestepOutOfRange { t: usize, n_steps: usize },
    #[error("image shape mismatch: expected {expected:?}, got {actual:?}")]
    ImageShape {
        expected: (usize, usize, usize),
        actual: (usize, usize, usize),
    },
    #[error("conditioning shape mismatch: backend expects d_text {expected}, got {actual}")]
    CondShape { expected: usize, actual: usize },
    #[error("non-finite prediction at timestep {t} ({context})")]
    NonFinitePrediction { t: usize, context: String },
    #[error("non-finite sampler state at inference step {step} (timestep {t})")]
    NonFiniteSample { step: usize, t: usize },
    #[error("backend is frozen (train_mode off); refusing parameter update")]
    Frozen,
    #[error("parameter vector length {actual} does not match backend parameter count {expected}")]
    ParamLen { expected: usize, actual: usize },
    #[error("checkpoint error at {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Errors from the Stage II / Stage III orchestration.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error("freeze violation: {what} hash changed during {stage} ({before} -> {after})")]
    FreezeViolation {
        what: String,
        stage: String,
        before: String,
        after: String,
    },
    #[error("non-finite loss for pair {pair_id} at epoch {epoch} ({stage})")]
    NonFiniteLoss {
        stage: String,
        pair_id: String,
        epoch: usize,
    },
    #[error("pair {pair_id} has no optimized embedding; Stage III needs one per pair")]
    MissingEmbedding { pair_id: String },
    #[error("no {split} records for gesture {gesture:?} in the dataset")]
    NoRecords { gesture: String, split: String },
    #[error("run directory {path} is locked or not writable: {reason}")]
    RunDir { path: PathBuf, reason: String },
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Gesture(#[from] GestureError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest error: {0}")]
    Manifest(String),
}

/// Errors from dataset construction and QA.
#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("gesture {gesture:?} has {available} images, need {needed}")]
    InsufficientImages {
        gesture: String,
        available: usize,
        needed: usize,
    },
    #[error("unknown gesture id {gesture:?}")]
    UnknownGesture { gesture: String },
    #[error("adapter {name:?} failed on {failed} of {total} records, over the {budget_pct}% budget")]
    FailureBudgetExceeded {
        name: String,
        failed: usize,
        total: usize,
        budget_pct: f64,
    },
    #[error("adapter {name:?} failed: {reason}")]
    AdapterFailure { name: String, reason: String },
    #[error("enriched caption for {pair_id} does not contain the gesture phrase {phrase:?}")]
    MissingPhrase { pair_id: String, phrase: String },
    #[error("need at least {needed} records, got {got}")]
    TooFewRecords { needed: usize, got: usize },
    #[error("dataset manifest error at {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Errors from the evaluation metric suite.
#[derive(Debug, Error)]
pub enum EvalError {
    #[error("feature dimension mismatch: {a} vs {b}")]
    DimMismatch { a: usize, b: usize },
    #[error("need at least {needed} samples, got {got} ({context})")]
    TooFewSamples {
        needed: usize,
        got: usize,
        context: String,
    },
    #[error("eigendecomposition failed: {0}")]
    Eigen(String),
    #[error("feature extractor adapter {name:?} failed: {reason}")]
    ExtractorFailure { name: String, reason: String },
    #[error("metric {name:?} value {value} violates its range invariant")]
    MetricRange { name: String, value: f64 },
    #[error(transparent)]
    Gesture(#[from] GestureError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Configuration validation errors.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Aggregate error for code that crosses subsystem boundaries.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Gesture(#[from] GestureError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}
