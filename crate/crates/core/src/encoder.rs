//! Text encoder adapters: caption string -> `[n_tokens x d_text]` embedding.
//!
//! The offline fixture encoder derives a deterministic embedding from a hash
//! of the caption, so the whole pipeline runs with no model weights. A remote
//! HTTP variant forwards to a real encoder service.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::{EmbeddingMatrix, TextEmbedding};
use crate::error::FusionError;
use crate::remote;

pub trait TextEncoderAdapter: Send + Sync {
    fn name(&self) -> &str;
    fn n_tokens(&self) -> usize;
    fn d_text(&self) -> usize;
    fn encode(&self, text: &str) -> Result<TextEmbedding, FusionError>;
}

/// Deterministic hash-seeded encoder with a fixed `[8 x 32]` output shape.
#[derive(Debug, Clone)]
pub struct FixtureTextEncoder {
    n_tokens: usize,
    d_text: usize,
}

impl Default for FixtureTextEncoder {
    fn default() -> Self {
        Self {
            n_tokens: 8,
            d_text: 32,
        }
    }
}

impl FixtureTextEncoder {
    pub fn new(n_tokens: usize, d_text: usize) -> Self {
        Self { n_tokens, d_text }
    }
}

impl TextEncoderAdapter for FixtureTextEncoder {
    fn name(&self) -> &str {
        "fixture"
    }

    fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    fn d_text(&self) -> usize {
        self.d_text
    }

    fn encode(&self, text: &str) -> Result<TextEmbedding, FusionError> {
        let digest = Sha256::digest(text.as_bytes());
        let seed = u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..self.n_tokens * self.d_text)
            .map(|_| {
                let v: f64 = rng.sample(StandardNormal);
                v as f32
            })
            .collect();
        let tensor = crate::artifacts::Tensor::new(vec![self.n_tokens, self.d_text], data)
            .map_err(|e| FusionError::EncoderFailure {
                name: "fixture".to_string(),
                reason: e.to_string(),
            })?;
        Ok(TextEmbedding::new(EmbeddingMatrix::new(tensor).map_err(
            |e| FusionError::EncoderFailure {
                name: "fixture".to_string(),
                reason: e.to_string(),
            },
        )?))
    }
}

#[derive(Serialize)]
struct EncodeRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct EncodeResponse {
    embedding: Vec<Vec<f32>>,
}

/// HTTP encoder: `POST <base>/encode {"text": ...}` -> `{"embedding": [[f32]]}`.
pub struct RemoteTextEncoder {
    base_url: String,
    n_tokens: usize,
    d_text: usize,
    client: reqwest::blocking::Client,
}

impl RemoteTextEncoder {
    pub fn new(base_url: impl Into<String>, n_tokens: usize, d_text: usize) -> Self {
        Self {
            base_url: base_url.into(),
            n_tokens,
            d_text,
            client: remote::make_client(),
        }
    }
}

impl TextEncoderAdapter for RemoteTextEncoder {
    fn name(&self) -> &str {
        "remote"
    }

    fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    fn d_text(&self) -> usize {
        self.d_text
    }

    fn encode(&self, text: &str) -> Result<TextEmbedding, FusionError> {
        let url = format!("{}/encode", self.base_url.trim_end_matches('/'));
        let fail = |reason: String| FusionError::EncoderFailure {
            name: "remote".to_string(),
            reason,
        };
        let response = self
            .client
            .post(&url)
            .json(&EncodeRequest { text })
            .send()
            .map_err(|e| fail(e.to_string()))?;
        if !response.status().is_success() {
            return Err(fail(format!("status {}", response.status())));
        }
        let parsed: EncodeResponse = response.json().map_err(|e| fail(e.to_string()))?;
        if parsed.embedding.len() != self.n_tokens
            || parsed.embedding.iter().any(|r| r.len() != self.d_text)
        {
            return Err(fail(format!(
                "embedding shape mismatch: expected [{}x{}]",
                self.n_tokens, self.d_text
            )));
        }
        let matrix =
            EmbeddingMatrix::from_rows(parsed.embedding).map_err(|e| fail(e.to_string()))?;
        Ok(TextEmbedding::new(matrix))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_encoder_is_deterministic_with_fixed_shape() {
        let enc = FixtureTextEncoder::default();
        let a = enc.encode("a man in a park").unwrap();
        let b = enc.encode("a man in a park").unwrap();
        let c = enc.encode("a woman in a park").unwrap();
        assert_eq!(a.matrix().tensor(), b.matrix().tensor());
        assert_ne!(a.matrix().tensor(), c.matrix().tensor());
        assert_eq!(a.matrix().n_tokens(), 8);
        assert_eq!(a.matrix().d_text(), 32);
    }
}
