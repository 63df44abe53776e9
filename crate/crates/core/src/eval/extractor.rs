//! Feature extractor adapters for the distribution metrics.
//!
//! The identity and downsample extractors are the offline fixtures used at
//! desk scale; the inception-style extractor of the full-scale setup sits
//! behind the same interface as a remote adapter.

use serde::Deserialize;

use crate::error::EvalError;
use crate::img::Image;
use crate::remote;

pub trait FeatureExtractorAdapter: Send + Sync {
    fn name(&self) -> &str;
    fn d_feat(&self) -> usize;
    fn extract(&self, image: &Image) -> Result<Vec<f64>, EvalError>;
}

/// Flattens the grayscale image; requires a fixed input size.
#[derive(Debug, Clone)]
pub struct IdentityExtractor {
    height: usize,
    width: usize,
}

impl IdentityExtractor {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }
}

impl FeatureExtractorAdapter for IdentityExtractor {
    fn name(&self) -> &str {
        "identity"
    }

    fn d_feat(&self) -> usize {
        self.height * self.width
    }

    fn extract(&self, image: &Image) -> Result<Vec<f64>, EvalError> {
        let gray = image.to_gray();
        if gray.height() != self.height || gray.width() != self.width {
            return Err(EvalError::ExtractorFailure {
                name: "identity".to_string(),
                reason: format!(
                    "expected {}x{} input, got {}x{}",
                    self.height,
                    self.width,
                    gray.height(),
                    gray.width()
                ),
            });
        }
        Ok(gray.data().iter().map(|&v| f64::from(v)).collect())
    }
}

/// Grayscale, bilinear-resized to a small grid and flattened. Accepts any
/// input size, which makes it the default for hand-crop metrics.
#[derive(Debug, Clone)]
pub struct DownsampleExtractor {
    grid: usize,
}

impl DownsampleExtractor {
    pub fn new(grid: usize) -> Self {
        assert!(grid > 0);
        Self { grid }
    }
}

impl Default for DownsampleExtractor {
    fn default() -> Self {
        Self { grid: 4 }
    }
}

impl FeatureExtractorAdapter for DownsampleExtractor {
    fn name(&self) -> &str {
        "downsample"
    }

    fn d_feat(&self) -> usize {
        self.grid * self.grid
    }

    fn extract(&self, image: &Image) -> Result<Vec<f64>, EvalError> {
        let resized = image.to_gray().resize(self.grid, self.grid);
        Ok(resized.data().iter().map(|&v| f64::from(v)).collect())
    }
}

#[derive(Deserialize)]
struct ExtractResponse {
    vector: Vec<f64>,
}

/// HTTP extractor: `POST <base>/extract` with a PNG body -> `{"vector": [...]}`.
pub struct RemoteExtractor {
    base_url: String,
    d_feat: usize,
    client: reqwest::blocking::Client,
}

impl RemoteExtractor {
    pub fn new(base_url: impl Into<String>, d_feat: usize) -> Self {
        Self {
            base_url: base_url.into(),
            d_feat,
            client: remote::make_client(),
        }
    }
}

impl FeatureExtractorAdapter for RemoteExtractor {
    fn name(&self) -> &str {
        "remote"
    }

    fn d_feat(&self) -> usize {
        self.d_feat
    }

    fn extract(&self, image: &Image) -> Result<Vec<f64>, EvalError> {
        let url = format!("{}/extract", self.base_url.trim_end_matches('/'));
        let fail = |reason: String| EvalError::ExtractorFailure {
            name: "remote".to_string(),
            reason,
        };
        let response = self
            .client
            .post(&url)
            .header("content-type", "image/png")
            .body(remote::png_bytes(image))
            .send()
            .map_err(|e| fail(e.to_string()))?;
        if !response.status().is_success() {
            return Err(fail(format!("status {}", response.status())));
        }
        let parsed: ExtractResponse = response.json().map_err(|e| fail(e.to_string()))?;
        if parsed.vector.len() != self.d_feat {
            return Err(fail(format!(
                "feature dim {} != configured {}",
                parsed.vector.len(),
                self.d_feat
            )));
        }
        if parsed.vector.iter().any(|v| !v.is_finite()) {
            return Err(fail("non-finite feature values".to_string()));
        }
        Ok(parsed.vector)
    }
}
