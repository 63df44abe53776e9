//! Captioner, enricher, and joint-embedder adapters.
//!
//! Offline deterministic variants ship for CI and desk-scale runs; remote
//! HTTP variants forward to real models.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::DatasetError;
use crate::img::Image;
use crate::remote;

pub trait CaptionerAdapter: Send + Sync {
    fn name(&self) -> &str;
    /// Non-empty description of the image.
    fn caption(&self, image: &Image) -> Result<String, DatasetError>;
}

pub trait EnricherAdapter: Send + Sync {
    fn name(&self) -> &str;
    /// Must contain the gesture phrase (case-insensitive) in its output.
    fn enrich(&self, caption: &str, gesture_phrase: &str) -> Result<String, DatasetError>;
}

pub trait JointEmbedderAdapter: Send + Sync {
    fn name(&self) -> &str;
    fn d_joint(&self) -> usize;
    /// L2-normalized to 1 within 1e-5.
    fn embed_text(&self, text: &str) -> Result<Vec<f64>, DatasetError>;
    /// L2-normalized to 1 within 1e-5.
    fn embed_image(&self, image: &Image) -> Result<Vec<f64>, DatasetError>;
}

/// Validates the unit-norm contract of a joint embedder output.
pub fn check_unit_norm(name: &str, v: &[f64]) -> Result<(), DatasetError> {
    let norm = v.iter().map(|&x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-5 {
        return Err(DatasetError::AdapterFailure {
            name: name.to_string(),
            reason: format!("embedding norm {norm} violates the unit-norm contract"),
        });
    }
    Ok(())
}

/// Deterministic offline captioner: a description from coarse image
/// statistics (brightness band and bright-region quadrant).
#[derive(Debug, Clone, Default)]
pub struct TemplateCaptioner;

impl CaptionerAdapter for TemplateCaptioner {
    fn name(&self) -> &str {
        "template"
    }

    fn caption(&self, image: &Image) -> Result<String, DatasetError> {
        let gray = image.to_gray();
        let mean: f32 = gray.data().iter().sum::<f32>() / gray.data().len() as f32;
        let tone = if mean < 0.25 {
            "dark"
        } else if mean < 0.5 {
            "dim"
        } else {
            "bright"
        };
        // Quadrant of the brightest pixel.
        let (mut by, mut bx, mut bv) = (0usize, 0usize, f32::MIN);
        for y in 0..gray.height() {
            for x in 0..gray.width() {
                let v = gray.get(0, y, x);
                if v > bv {
                    bv = v;
                    by = y;
                    bx = x;
                }
            }
        }
        let vert = if by < gray.height() / 2 { "upper" } else { "lower" };
        let horz = if bx < gray.width() / 2 { "left" } else { "right" };
        Ok(format!(
            "a {tone} scene with a bright mark in the {vert} {horz}"
        ))
    }
}

/// Deterministic offline enricher: appends the gesture phrase.
#[derive(Debug, Clone, Default)]
pub struct TemplateEnricher;

impl EnricherAdapter for TemplateEnricher {
    fn name(&self) -> &str {
        "template"
    }

    fn enrich(&self, caption: &str, gesture_phrase: &str) -> Result<String, DatasetError> {
        Ok(format!(
            "{caption}, making a {gesture_phrase} hand gesture"
        ))
    }
}

/// Fixture embedder returning the same unit vector for every input (perfect
/// image-caption consistency).
#[derive(Debug, Clone)]
pub struct ConstantJointEmbedder {
    d: usize,
}

impl ConstantJointEmbedder {
    pub fn new(d: usize) -> Self {
        assert!(d >= 1);
        Self { d }
    }

    fn basis(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.d];
        v[0] = 1.0;
        v
    }
}

impl JointEmbedderAdapter for ConstantJointEmbedder {
    fn name(&self) -> &str {
        "constant-fixture"
    }

    fn d_joint(&self) -> usize {
        self.d
    }

    fn embed_text(&self, _text: &str) -> Result<Vec<f64>, DatasetError> {
        Ok(self.basis())
    }

    fn embed_image(&self, _image: &Image) -> Result<Vec<f64>, DatasetError> {
        Ok(self.basis())
    }
}

/// Fixture embedder mapping each input to a hash-selected basis vector;
/// distinct inputs land on orthogonal axes (modulo collisions).
#[derive(Debug, Clone)]
pub struct BasisHashEmbedder {
    d: usize,
}

impl BasisHashEmbedder {
    pub fn new(d: usize) -> Self {
        assert!(d >= 2);
        Self { d }
    }

    pub fn basis_index(&self, bytes: &[u8]) -> usize {
        let digest = Sha256::digest(bytes);
        (u64::from_le_bytes(digest[..8].try_into().expect("digest")) % self.d as u64) as usize
    }

    fn basis(&self, idx: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.d];
        v[idx] = 1.0;
        v
    }
}

impl JointEmbedderAdapter for BasisHashEmbedder {
    fn name(&self) -> &str {
        "basis-fixture"
    }

    fn d_joint(&self) -> usize {
        self.d
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>, DatasetError> {
        Ok(self.basis(self.basis_index(text.as_bytes())))
    }

    fn embed_image(&self, image: &Image) -> Result<Vec<f64>, DatasetError> {
        let bytes: Vec<u8> = image
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        Ok(self.basis(self.basis_index(&bytes)))
    }
}

/// Default offline embedder: a deterministic hash-seeded Gaussian direction
/// per input, L2-normalized.
#[derive(Debug, Clone)]
pub struct HashJointEmbedder {
    d: usize,
}

impl HashJointEmbedder {
    pub fn new(d: usize) -> Self {
        assert!(d >= 2);
        Self { d }
    }

    fn direction(&self, bytes: &[u8]) -> Vec<f64> {
        let digest = Sha256::digest(bytes);
        let seed = u64::from_le_bytes(digest[..8].try_into().expect("digest"));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v: Vec<f64> = (0..self.d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|&x| x * x).sum::<f64>().sqrt().max(1e-12);
        for x in v.iter_mut() {
            *x /= norm;
        }
        v
    }
}

impl JointEmbedderAdapter for HashJointEmbedder {
    fn name(&self) -> &str {
        "hash"
    }

    fn d_joint(&self) -> usize {
        self.d
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>, DatasetError> {
        Ok(self.direction(format!("text:{text}").as_bytes()))
    }

    fn embed_image(&self, image: &Image) -> Result<Vec<f64>, DatasetError> {
        let mut bytes = b"image:".to_vec();
        bytes.extend(
            image
                .data()
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
        Ok(self.direction(&bytes))
    }
}

fn adapter_fail(name: &str, reason: impl ToString) -> DatasetError {
    DatasetError::AdapterFailure {
        name: name.to_string(),
        reason: reason.to_string(),
    }
}

#[derive(Deserialize)]
struct CaptionResponse {
    caption: String,
}

/// HTTP captioner: `POST <base>/caption` with a PNG body -> `{"caption": ...}`.
pub struct RemoteCaptioner {
    base_url: String,
    client: reqwest::blocking::Client,
}

impl RemoteCaptioner {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            client: remote::make_client(),
        }
    }
}

impl CaptionerAdapter for RemoteCaptioner {
    fn name(&self) -> &str {
        "remote"
    }

    fn caption(&self, image: &Image) -> Result<String, DatasetError> {
        let url = format!("{}/caption", self.base_url.trim_end_matches('/'));
        let response = self
            .client
            .post(&url)
            .header("content-type", "image/png")
            .body(remote::png_bytes(image))
            .send()
            .map_err(|e| adapter_fail("remote-captioner", e))?;
        if !response.status().is_success() {
            return Err(adapter_fail(
                "remote-captioner",
                format!("status {}", response.status()),
            ));
        }
        let parsed: CaptionResponse = response
            .json()
            .map_err(|e| adapter_fail("remote-captioner", e))?;
        if parsed.caption.is_empty() {
            return Err(adapter_fail("remote-captioner", "empty caption"));
        }
        Ok(parsed.caption)
    }
}

#[derive(Serialize)]
struct EnrichRequest<'a> {
    caption: &'a str,
    label: &'a str,
}

#[derive(Deserialize)]
struct EnrichResponse {
    enriched: String,
}

/// HTTP enricher: `POST <base>/enrich {"caption", "label"}` -> `{"enriched"}`.
pub struct RemoteEnricher {
    base_url: String,
    client: reqwest::blocking::Client,
}

impl RemoteEnricher {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            client: remote::make_client(),
        }
    }
}

impl EnricherAdapter for RemoteEnricher {
    fn name(&self) -> &str {
        "remote"
    }

    fn enrich(&self, caption: &str, gesture_phrase: &str) -> Result<String, DatasetError> {
        let url = format!("{}/enrich", self.base_url.trim_end_matches('/'));
        let response = self
            .client
            .post(&url)
            .json(&EnrichRequest {
                caption,
                label: gesture_phrase,
            })
            .send()
            .map_err(|e| adapter_fail("remote-enricher", e))?;
        if !response.status().is_success() {
            return Err(adapter_fail(
                "remote-enricher",
                format!("status {}", response.status()),
            ));
        }
        let parsed: EnrichResponse = response
            .json()
            .map_err(|e| adapter_fail("remote-enricher", e))?;
        Ok(parsed.enriched)
    }
}

#[derive(Serialize)]
struct EmbedTextRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vector: Vec<f64>,
}

/// HTTP joint embedder: `POST <base>/embed_text {"text"}` and
/// `POST <base>/embed_image` (PNG body), both -> `{"vector": [...]}`.
pub struct RemoteJointEmbedder {
    base_url: String,
    d_joint: usize,
    client: reqwest::blocking::Client,
}

impl RemoteJointEmbedder {
    pub fn new(base_url: impl Into<String>, d_joint: usize) -> Self {
        Self {
            base_url: base_url.into(),
            d_joint,
            client: remote::make_client(),
        }
    }

    fn check(&self, v: Vec<f64>) -> Result<Vec<f64>, DatasetError> {
        if v.len() != self.d_joint {
            return Err(adapter_fail(
                "remote-embedder",
                format!("dim {} != configured {}", v.len(), self.d_joint),
            ));
        }
        check_unit_norm("remote-embedder", &v)?;
        Ok(v)
    }
}

impl JointEmbedderAdapter for RemoteJointEmbedder {
    fn name(&self) -> &str {
        "remote"
    }

    fn d_joint(&self) -> usize {
        self.d_joint
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>, DatasetError> {
        let url = format!("{}/embed_text", self.base_url.trim_end_matches('/'));
        let response = self
            .client
            .post(&url)
            .json(&EmbedTextRequest { text })
            .send()
            .map_err(|e| adapter_fail("remote-embedder", e))?;
        if !response.status().is_success() {
            return Err(adapter_fail(
                "remote-embedder",
                format!("status {}", response.status()),
            ));
        }
        let parsed: EmbedResponse = response
            .json()
            .map_err(|e| adapter_fail("remote-embedder", e))?;
        self.check(parsed.vector)
    }

    fn embed_image(&self, image: &Image) -> Result<Vec<f64>, DatasetError> {
        let url = format!("{}/embed_image", self.base_url.trim_end_matches('/'));
        let response = self
            .client
            .post(&url)
            .header("content-type", "image/png")
            .body(remote::png_bytes(image))
            .send()
            .map_err(|e| adapter_fail("remote-embedder", e))?;
        if !response.status().is_success() {
            return Err(adapter_fail(
                "remote-embedder",
                format!("status {}", response.status()),
            ));
        }
        let parsed: EmbedResponse = response
            .json()
            .map_err(|e| adapter_fail("remote-embedder", e))?;
        self.check(parsed.vector)
    }
}
