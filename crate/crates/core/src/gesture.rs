//! Stage I: per-image gesture feature extraction and the mean gesture
//! feature.
//!
//! Recognition sits behind [`GestureRecognizerAdapter`]; the reference
//! implementation is [`GlyphOracleRecognizer`], a deterministic extractor
//! over the synthetic glyph images. A remote HTTP variant is provided for
//! real recognizers.

use serde::Deserialize;

use crate::artifacts::Tensor;
use crate::error::GestureError;
use crate::img::Image;
use crate::remote;

/// Default confidence floor below which detections are ignored by
/// [`extract_feature`].
pub const DEFAULT_CONFIDENCE_FLOOR: f32 = 0.5;

/// Fixed-length feature vector for one detected gesture.
#[derive(Debug, Clone, PartialEq)]
pub struct GestureFeature {
    tensor: Tensor,
}

impl GestureFeature {
    pub fn new(values: Vec<f32>) -> Result<Self, GestureError> {
        let len = values.len();
        let tensor = Tensor::new(vec![len], values).map_err(|e| GestureError::InvalidDetection {
            name: "feature".to_string(),
            reason: e.to_string(),
        })?;
        Ok(Self { tensor })
    }

    pub fn dim(&self) -> usize {
        self.tensor.len()
    }

    pub fn values(&self) -> &[f32] {
        self.tensor.data()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }
}

/// Arithmetic mean of per-image gesture features for one gesture class.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanGestureFeature {
    gesture_id: String,
    tensor: Tensor,
    n_source_images: usize,
}

impl MeanGestureFeature {
    pub fn from_parts(
        gesture_id: impl Into<String>,
        tensor: Tensor,
        n_source_images: usize,
    ) -> Result<Self, GestureError> {
        if n_source_images == 0 {
            return Err(GestureError::NoDetections { n_images: 0 });
        }
        Ok(Self {
            gesture_id: gesture_id.into(),
            tensor,
            n_source_images,
        })
    }

    pub fn gesture_id(&self) -> &str {
        &self.gesture_id
    }

    pub fn dim(&self) -> usize {
        self.tensor.len()
    }

    pub fn values(&self) -> &[f32] {
        self.tensor.data()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn n_source_images(&self) -> usize {
        self.n_source_images
    }
}

/// One detection returned by a recognizer adapter.
#[derive(Debug, Clone)]
pub struct Detection {
    pub feature: GestureFeature,
    /// Confidence in [0, 1].
    pub confidence: f32,
    /// Normalized [x0, y0, x1, y1] with x0 < x1 and y0 < y1.
    pub bbox: [f32; 4],
}

impl Detection {
    fn validate(&self, adapter: &str) -> Result<(), GestureError> {
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(GestureError::InvalidDetection {
                name: adapter.to_string(),
                reason: format!("confidence {} outside [0,1]", self.confidence),
            });
        }
        let [x0, y0, x1, y1] = self.bbox;
        let in_range = [x0, y0, x1, y1].iter().all(|v| (0.0..=1.0).contains(v));
        if !in_range || x0 >= x1 || y0 >= y1 {
            return Err(GestureError::InvalidDetection {
                name: adapter.to_string(),
                reason: format!("bbox {:?} is not a normalized box", self.bbox),
            });
        }
        Ok(())
    }
}

/// Pluggable gesture recognizer.
pub trait GestureRecognizerAdapter: Send + Sync {
    fn name(&self) -> &str;
    /// Output feature dimension; constant for the adapter's lifetime.
    fn d_gesture(&self) -> usize;
    /// All detections in the image. An empty vector means "no gesture found";
    /// adapter failures (e.g. an unreachable remote) are errors.
    fn detect(&self, image: &Image) -> Result<Vec<Detection>, GestureError>;
}

/// Deterministic recognizer over synthetic glyph images.
///
/// Foreground is thresholded, connected components become detections, and the
/// feature is the flattened 4x4 occupancy grid of the component inside its
/// bounding box. Confidence is the component's fill ratio within the box.
#[derive(Debug, Clone)]
pub struct GlyphOracleRecognizer {
    threshold: f32,
    min_pixels: usize,
}

impl Default for GlyphOracleRecognizer {
    fn default() -> Self {
        Self {
            threshold: 0.6,
            min_pixels: 4,
        }
    }
}

const FEATURE_GRID: usize = 4;

impl GlyphOracleRecognizer {
    pub fn new(threshold: f32, min_pixels: usize) -> Self {
        Self {
            threshold,
            min_pixels,
        }
    }
}

impl GestureRecognizerAdapter for GlyphOracleRecognizer {
    fn name(&self) -> &str {
        "glyph_oracle"
    }

    fn d_gesture(&self) -> usize {
        FEATURE_GRID * FEATURE_GRID
    }

    fn detect(&self, image: &Image) -> Result<Vec<Detection>, GestureError> {
        let gray = image.to_gray();
        let (h, w) = (gray.height(), gray.width());
        let mask: Vec<bool> = gray.data().iter().map(|&v| v > self.threshold).collect();
        let mut labels = vec![usize::MAX; h * w];
        let mut detections = Vec::new();
        let mut next = 0usize;
        for start in 0..h * w {
            if !mask[start] || labels[start] != usize::MAX {
                continue;
            }
            // Flood fill one 4-connected component.
            let mut stack = vec![start];
            let mut pixels = Vec::new();
            labels[start] = next;
            while let Some(p) = stack.pop() {
                pixels.push(p);
                let (y, x) = (p / w, p % w);
                let mut push = |q: usize| {
                    if mask[q] && labels[q] == usize::MAX {
                        labels[q] = next;
                        stack.push(q);
                    }
                };
                if x > 0 {
                    push(p - 1);
                }
                if x + 1 < w {
                    push(p + 1);
                }
                if y > 0 {
                    push(p - w);
                }
                if y + 1 < h {
                    push(p + w);
                }
            }
            next += 1;
            if pixels.len() < self.min_pixels {
                continue;
            }
            let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0usize, 0usize);
            for &p in &pixels {
                let (y, x) = (p / w, p % w);
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
            let (bw, bh) = (x1 - x0 + 1, y1 - y0 + 1);
            let confidence = pixels.len() as f32 / (bw * bh) as f32;
            // 4x4 occupancy grid over the bounding box.
            let mut sums = [0.0f32; FEATURE_GRID * FEATURE_GRID];
            let mut counts = [0u32; FEATURE_GRID * FEATURE_GRID];
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let gy = ((y - y0) * FEATURE_GRID / bh).min(FEATURE_GRID - 1);
                    let gx = ((x - x0) * FEATURE_GRID / bw).min(FEATURE_GRID - 1);
                    let cell = gy * FEATURE_GRID + gx;
                    counts[cell] += 1;
                    if mask[y * w + x] {
                        sums[cell] += 1.0;
                    }
                }
            }
            let feature: Vec<f32> = sums
                .iter()
                .zip(&counts)
                .map(|(&s, &c)| if c > 0 { s / c as f32 } else { 0.0 })
                .collect();
            detections.push(Detection {
                feature: GestureFeature::new(feature)?,
                confidence: confidence.min(1.0),
                bbox: [
                    x0 as f32 / w as f32,
                    y0 as f32 / h as f32,
                    (x1 + 1) as f32 / w as f32,
                    (y1 + 1) as f32 / h as f32,
                ],
            });
        }
        detections.sort_by(|a, b| {
            b.confidence
                .total_cmp(&a.confidence)
                .then(a.bbox[1].total_cmp(&b.bbox[1]))
                .then(a.bbox[0].total_cmp(&b.bbox[0]))
        });
        Ok(detections)
    }
}

#[derive(Debug, Deserialize)]
struct RemoteDetection {
    feature: Vec<f32>,
    confidence: f32,
    bbox: [f32; 4],
}

#[derive(Debug, Deserialize)]
struct DetectResponse {
    detections: Vec<RemoteDetection>,
}

/// HTTP recognizer: `POST <base>/detect` with a PNG body, JSON response.
pub struct RemoteRecognizer {
    base_url: String,
    d_gesture: usize,
    client: reqwest::blocking::Client,
}

impl RemoteRecognizer {
    pub fn new(base_url: impl Into<String>, d_gesture: usize) -> Self {
        Self {
            base_url: base_url.into(),
            d_gesture,
            client: remote::make_client(),
        }
    }
}

impl GestureRecognizerAdapter for RemoteRecognizer {
    fn name(&self) -> &str {
        "remote"
    }

    fn d_gesture(&self) -> usize {
        self.d_gesture
    }

    fn detect(&self, image: &Image) -> Result<Vec<Detection>, GestureError> {
        let url = format!("{}/detect", self.base_url.trim_end_matches('/'));
        let fail = |reason: String| GestureError::AdapterFailure {
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
        let parsed: DetectResponse = response.json().map_err(|e| fail(e.to_string()))?;
        let mut out = Vec::with_capacity(parsed.detections.len());
        for d in parsed.detections {
            if d.feature.len() != self.d_gesture {
                return Err(GestureError::FeatureDimMismatch {
                    expected: self.d_gesture,
                    actual: d.feature.len(),
                });
            }
            let det = Detection {
                feature: GestureFeature::new(d.feature)?,
                confidence: d.confidence,
                bbox: d.bbox,
            };
            det.validate("remote")?;
            out.push(det);
        }
        Ok(out)
    }
}

/// Feature of the highest-confidence detection, or `None` when nothing
/// exceeds the confidence floor. Adapter failures are errors, not `None`.
pub fn extract_feature(
    image: &Image,
    adapter: &dyn GestureRecognizerAdapter,
    confidence_floor: f32,
) -> Result<Option<GestureFeature>, GestureError> {
    let detections = adapter.detect(image)?;
    for d in &detections {
        d.validate(adapter.name())?;
        if d.feature.dim() != adapter.d_gesture() {
            return Err(GestureError::FeatureDimMismatch {
                expected: adapter.d_gesture(),
                actual: d.feature.dim(),
            });
        }
    }
    let best = detections
        .into_iter()
        .filter(|d| d.confidence > confidence_floor)
        .max_by(|a, b| a.confidence.total_cmp(&b.confidence));
    Ok(best.map(|d| d.feature))
}

/// Elementwise arithmetic mean of the features extracted from `images`.
///
/// Images without a detection are skipped (and logged); the accumulation is a
/// sequential f64 reduce over canonically sorted features, so the result is
/// identical under any permutation of the image list.
pub fn mean_gesture_feature(
    gesture_id: &str,
    images: &[Image],
    adapter: &dyn GestureRecognizerAdapter,
    confidence_floor: f32,
) -> Result<MeanGestureFeature, GestureError> {
    let mut features: Vec<Vec<f32>> = Vec::new();
    for (i, image) in images.iter().enumerate() {
        match extract_feature(image, adapter, confidence_floor)? {
            Some(f) => features.push(f.values().to_vec()),
            None => log::debug!(
                "gesture {gesture_id}: image {i} skipped (no detection above floor {confidence_floor})"
            ),
        }
    }
    if features.is_empty() {
        return Err(GestureError::NoDetections {
            n_images: images.len(),
        });
    }
    let d = adapter.d_gesture();
    features.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut acc = vec![0.0f64; d];
    for f in &features {
        for (a, &v) in acc.iter_mut().zip(f.iter()) {
            *a += f64::from(v);
        }
    }
    let n = features.len();
    let mean: Vec<f32> = acc.iter().map(|&s| (s / n as f64) as f32).collect();
    let tensor = Tensor::new(vec![d], mean).map_err(|e| GestureError::InvalidDetection {
        name: adapter.name().to_string(),
        reason: e.to_string(),
    })?;
    MeanGestureFeature::from_parts(gesture_id, tensor, n)
}
