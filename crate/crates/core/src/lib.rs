//! Gesture-conditioned text-to-image fine-tuning at desk scale.
//!
//! The pipeline runs in three stages: extract a mean gesture feature through
//! a recognizer adapter, optimize a per-pair fused text embedding against a
//! frozen diffusion backend, and fine-tune the backend with the optimized
//! embeddings frozen. Dataset construction, hand-aware evaluation metrics
//! (FID/KID and their hand-crop variants, detector confidence), and a toy
//! trainable backend make the whole system verifiable on a CPU.

pub mod artifacts;
pub mod dataset;
pub mod diffusion;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod gesture;
pub mod glyph;
pub mod img;
pub mod remote;
pub mod rng;
pub mod training;

pub use error::Error;
