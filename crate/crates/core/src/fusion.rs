//! Embedding fusion: concatenate a gesture feature onto every token row of a
//! text embedding, project back to the text dimension through a frozen linear
//! map, and blend linearly with the original embedding.
//!
//! The projection weights are never updated by any optimizer; their hash is
//! checked before and after every training stage.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::artifacts::{load_tensor, save_tensor, Tensor};
use crate::embedding::{DoubleFusedEmbedding, EmbeddingMatrix, FusedEmbedding, TextEmbedding};
use crate::encoder::TextEncoderAdapter;
use crate::error::FusionError;
use crate::gesture::MeanGestureFeature;
use crate::rng::rng_for;

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

/// Frozen `[(d_text + d_gesture) x d_text]` projection, generated
/// deterministically from a seed with fan-in scaling and no bias term.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionWeights {
    tensor: Tensor,
    seed: u64,
}

impl ProjectionWeights {
    /// Seeded initialization: uniform on +-1/sqrt(d_text + d_gesture).
    /// The same seed and dimensions always produce byte-identical weights.
    pub fn seeded(d_text: usize, d_gesture: usize, seed: u64) -> Self {
        let d_in = d_text + d_gesture;
        let bound = 1.0 / (d_in as f64).sqrt();
        let mut rng = rng_for(seed, &["projection"]);
        let data: Vec<f32> = (0..d_in * d_text)
            .map(|_| rng.gen_range(-bound..bound) as f32)
            .collect();
        Self {
            tensor: Tensor::new(vec![d_in, d_text], data).expect("finite by construction"),
            seed,
        }
    }

    /// Wraps existing weights (used by tests and bundle loading).
    pub fn from_tensor(tensor: Tensor, seed: u64) -> Result<Self, FusionError> {
        if tensor.shape().len() != 2 {
            return Err(FusionError::ProjectionDims {
                w_in: tensor.shape().first().copied().unwrap_or(0),
                w_out: tensor.shape().get(1).copied().unwrap_or(0),
                need_in: 0,
                need_out: 0,
            });
        }
        Ok(Self { tensor, seed })
    }

    pub fn d_in(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn content_hash(&self) -> String {
        self.tensor.content_hash()
    }
}

/// Blend coefficients for training (lambda) and inference (mu).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub lambda_train: f32,
    pub mu_infer: f32,
}

impl FusionConfig {
    pub fn new(lambda_train: f32, mu_infer: f32) -> Result<Self, FusionError> {
        for coeff in [lambda_train, mu_infer] {
            if !(0.0..=1.0).contains(&coeff) {
                return Err(FusionError::CoeffRange { coeff });
            }
        }
        Ok(Self {
            lambda_train,
            mu_infer,
        })
    }
}

/// Appends the gesture vector to every token row and applies the frozen
/// projection (no bias). Output shape equals the input text-embedding shape.
pub fn concat_project(
    e_t: &TextEmbedding,
    gesture: &[f32],
    weights: &ProjectionWeights,
) -> Result<FusedEmbedding, FusionError> {
    let m = e_t.matrix();
    let (n_tokens, d_text) = (m.n_tokens(), m.d_text());
    let d_in = d_text + gesture.len();
    if weights.d_in() != d_in || weights.d_out() != d_text {
        return Err(FusionError::ProjectionDims {
            w_in: weights.d_in(),
            w_out: weights.d_out(),
            need_in: d_in,
            need_out: d_text,
        });
    }
    let w = weights.tensor().data();
    let mut out = vec![0.0f64; n_tokens * d_text];
    for i in 0..n_tokens {
        let row = m.row(i);
        for k in 0..d_text {
            let mut acc = 0.0f64;
            for (j, &v) in row.iter().enumerate() {
                acc += f64::from(v) * f64::from(w[j * d_text + k]);
            }
            for (j, &g) in gesture.iter().enumerate() {
                acc += f64::from(g) * f64::from(w[(d_text + j) * d_text + k]);
            }
            out[i * d_text + k] = acc;
        }
    }
    let matrix = EmbeddingMatrix::from_f64(n_tokens, d_text, &out).map_err(|_| {
        FusionError::EncoderFailure {
            name: "concat_project".to_string(),
            reason: "non-finite fusion output".to_string(),
        }
    })?;
    Ok(FusedEmbedding::new(matrix))
}

/// `e_d = coeff * e_t + (1 - coeff) * e_f`, elementwise. The endpoints return
/// the corresponding input exactly.
pub fn linear_fuse(
    e_t: &TextEmbedding,
    e_f: &FusedEmbedding,
    coeff: f32,
) -> Result<DoubleFusedEmbedding, FusionError> {
    let blended = blend_matrices(e_t.matrix(), e_f.matrix(), coeff)?;
    Ok(DoubleFusedEmbedding::new(blended))
}

/// Matrix-level blend shared by training and inference paths.
pub fn blend_matrices(
    a: &EmbeddingMatrix,
    b: &EmbeddingMatrix,
    coeff: f32,
) -> Result<EmbeddingMatrix, FusionError> {
    if !(0.0..=1.0).contains(&coeff) {
        return Err(FusionError::CoeffRange { coeff });
    }
    if a.n_tokens() != b.n_tokens() || a.d_text() != b.d_text() {
        return Err(FusionError::ShapeMismatch {
            a_rows: a.n_tokens(),
            a_cols: a.d_text(),
            b_rows: b.n_tokens(),
            b_cols: b.d_text(),
        });
    }
    // Endpoint exactness is part of the contract.
    if coeff == 1.0 {
        return Ok(a.clone());
    }
    if coeff == 0.0 {
        return Ok(b.clone());
    }
    let c = f64::from(coeff);
    let out: Vec<f64> = a
        .tensor()
        .data()
        .iter()
        .zip(b.tensor().data())
        .map(|(&x, &y)| c * f64::from(x) + (1.0 - c) * f64::from(y))
        .collect();
    EmbeddingMatrix::from_f64(a.n_tokens(), a.d_text(), &out).map_err(|_| {
        FusionError::EncoderFailure {
            name: "linear_fuse".to_string(),
            reason: "non-finite blend output".to_string(),
        }
    })
}

/// Persisted training product: gesture id, mean feature, frozen projection,
/// and blend defaults, packaged for inference.
#[derive(Debug, Clone)]
pub struct GestureBundle {
    pub gesture_id: String,
    pub mean_feature: MeanGestureFeature,
    pub projection: ProjectionWeights,
    pub fusion: FusionConfig,
    pub seed: u64,
    pub format_version: u32,
}

#[derive(Serialize, Deserialize)]
struct BundleMeta {
    format_version: u32,
    gesture_id: String,
    lambda_train: f32,
    mu_infer: f32,
    seed: u64,
    n_source_images: usize,
    d_gesture: usize,
    d_text: usize,
}

impl GestureBundle {
    pub fn new(
        gesture_id: impl Into<String>,
        mean_feature: MeanGestureFeature,
        projection: ProjectionWeights,
        fusion: FusionConfig,
        seed: u64,
    ) -> Result<Self, FusionError> {
        let gesture_id = gesture_id.into();
        let d_gesture = mean_feature.dim();
        let d_text = projection.d_out();
        if projection.d_in() != d_text + d_gesture {
            return Err(FusionError::ProjectionDims {
                w_in: projection.d_in(),
                w_out: projection.d_out(),
                need_in: d_text + d_gesture,
                need_out: d_text,
            });
        }
        Ok(Self {
            gesture_id,
            mean_feature,
            projection,
            fusion,
            seed,
            format_version: BUNDLE_FORMAT_VERSION,
        })
    }

    /// Writes `bundle.json`, `mean_feature.tsr`, and `projection.tsr` under
    /// `dir`. Save -> load -> save is byte-identical.
    pub fn save(&self, dir: &Path) -> Result<(), FusionError> {
        fs::create_dir_all(dir).map_err(|e| bundle_err(dir, e.to_string()))?;
        let meta = BundleMeta {
            format_version: self.format_version,
            gesture_id: self.gesture_id.clone(),
            lambda_train: self.fusion.lambda_train,
            mu_infer: self.fusion.mu_infer,
            seed: self.seed,
            n_source_images: self.mean_feature.n_source_images(),
            d_gesture: self.mean_feature.dim(),
            d_text: self.projection.d_out(),
        };
        let json = serde_json::to_string_pretty(&meta).expect("meta serialization cannot fail");
        fs::write(dir.join("bundle.json"), json).map_err(|e| bundle_err(dir, e.to_string()))?;
        save_tensor(&dir.join("mean_feature.tsr"), self.mean_feature.tensor())?;
        save_tensor(&dir.join("projection.tsr"), self.projection.tensor())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, FusionError> {
        let meta_path = dir.join("bundle.json");
        let text =
            fs::read_to_string(&meta_path).map_err(|e| bundle_err(&meta_path, e.to_string()))?;
        let meta: BundleMeta =
            serde_json::from_str(&text).map_err(|e| bundle_err(&meta_path, e.to_string()))?;
        if meta.format_version > BUNDLE_FORMAT_VERSION {
            return Err(bundle_err(
                &meta_path,
                format!(
                    "format version {} is newer than supported {}",
                    meta.format_version, BUNDLE_FORMAT_VERSION
                ),
            ));
        }
        let mean = load_tensor(&dir.join("mean_feature.tsr"))?;
        let proj = load_tensor(&dir.join("projection.tsr"))?;
        let mean_feature = MeanGestureFeature::from_parts(
            meta.gesture_id.clone(),
            mean,
            meta.n_source_images,
        )
        .map_err(|e| bundle_err(dir, e.to_string()))?;
        let projection = ProjectionWeights::from_tensor(proj, meta.seed)?;
        let fusion = FusionConfig::new(meta.lambda_train, meta.mu_infer)?;
        let bundle = Self::new(meta.gesture_id, mean_feature, projection, fusion, meta.seed)?;
        Ok(Self {
            format_version: meta.format_version,
            ..bundle
        })
    }
}

fn bundle_err(path: &Path, reason: String) -> FusionError {
    FusionError::EncoderFailure {
        name: format!("bundle:{}", PathBuf::from(path).display()),
        reason,
    }
}

/// Full Stage II / inference conditioning path: encode the caption, fuse with
/// the bundle's mean gesture feature through its frozen projection, and blend.
pub fn build_double_fused(
    caption: &str,
    bundle: &GestureBundle,
    encoder: &dyn TextEncoderAdapter,
    coeff: f32,
) -> Result<DoubleFusedEmbedding, FusionError> {
    let e_t = encoder.encode(caption)?;
    if coeff == 1.0 {
        // Endpoint: the gesture pathway is disabled entirely.
        return Ok(DoubleFusedEmbedding::new(e_t.into_matrix()));
    }
    let e_f = concat_project(&e_t, bundle.mean_feature.values(), &bundle.projection)?;
    linear_fuse(&e_t, &e_f, coeff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::FixtureTextEncoder;

    fn text_embedding(rows: Vec<Vec<f32>>) -> TextEmbedding {
        TextEmbedding::new(EmbeddingMatrix::from_rows(rows).unwrap())
    }

    fn identity_top_projection(d_text: usize, d_gesture: usize) -> ProjectionWeights {
        // [I_dtext ; 0]: text rows pass through, gesture rows contribute 0.
        let d_in = d_text + d_gesture;
        let mut data = vec![0.0f32; d_in * d_text];
        for i in 0..d_text {
            data[i * d_text + i] = 1.0;
        }
        ProjectionWeights::from_tensor(Tensor::new(vec![d_in, d_text], data).unwrap(), 0).unwrap()
    }

    fn mean_feature(values: Vec<f32>) -> MeanGestureFeature {
        let d = values.len();
        MeanGestureFeature::from_parts("g", Tensor::new(vec![d], values).unwrap(), 1).unwrap()
    }

    #[test]
    fn identity_projection_reproduces_the_text_embedding_exactly() {
        let e_t = text_embedding(vec![vec![0.25, -1.5, 3.0], vec![0.1, 0.2, -0.3]]);
        let w = identity_top_projection(3, 2);
        let fused = concat_project(&e_t, &[5.0, -7.0], &w).unwrap();
        assert_eq!(fused.matrix().tensor().data(), e_t.matrix().tensor().data());
    }

    #[test]
    fn output_shape_matches_text_embedding_shape() {
        let e_t = text_embedding(vec![vec![0.0; 768]; 77]);
        let w = ProjectionWeights::from_tensor(
            Tensor::new(vec![784, 768], vec![0.0; 784 * 768]).unwrap(),
            0,
        )
        .unwrap();
        let fused = concat_project(&e_t, &[1.0; 16], &w).unwrap();
        assert_eq!(fused.matrix().n_tokens(), 77);
        assert_eq!(fused.matrix().d_text(), 768);
    }

    #[test]
    fn zero_text_rows_reduce_to_gesture_times_bottom_block() {
        // d_text = 2, d_gesture = 2, W = [0 ; B] with a known B.
        let b = [[0.5f32, -1.0], [2.0, 0.25]];
        let mut data = vec![0.0f32; 4 * 2];
        for (j, row) in b.iter().enumerate() {
            for (k, &v) in row.iter().enumerate() {
                data[(2 + j) * 2 + k] = v;
            }
        }
        let w =
            ProjectionWeights::from_tensor(Tensor::new(vec![4, 2], data).unwrap(), 0).unwrap();
        let e_t = text_embedding(vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![0.0, 0.0]]);
        let g = [3.0f32, -2.0];
        // Hand computation: g . B = [3*0.5 + (-2)*2, 3*(-1) + (-2)*0.25]
        let expected = [-2.5f32, -3.5];
        let fused = concat_project(&e_t, &g, &w).unwrap();
        for i in 0..3 {
            assert_eq!(fused.matrix().row(i), &expected);
        }
    }

    #[test]
    fn dimension_mismatch_names_expected_and_actual() {
        let e_t = text_embedding(vec![vec![0.0; 4]]);
        let w = identity_top_projection(4, 3);
        let err = concat_project(&e_t, &[0.0; 5], &w).unwrap_err();
        match err {
            FusionError::ProjectionDims {
                w_in,
                need_in,
                ..
            } => {
                assert_eq!(w_in, 7);
                assert_eq!(need_in, 9);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn blend_endpoints_are_exact() {
        let e_t = text_embedding(vec![vec![1.0, -2.0], vec![0.5, 0.25]]);
        let e_f = FusedEmbedding::new(
            EmbeddingMatrix::from_rows(vec![vec![9.0, 9.0], vec![9.0, 9.0]]).unwrap(),
        );
        let at_one = linear_fuse(&e_t, &e_f, 1.0).unwrap();
        assert_eq!(at_one.matrix().tensor().data(), e_t.matrix().tensor().data());
        let at_zero = linear_fuse(&e_t, &e_f, 0.0).unwrap();
        assert_eq!(
            at_zero.matrix().tensor().data(),
            e_f.matrix().tensor().data()
        );
    }

    #[test]
    fn blend_at_0p7_hits_the_analytic_values() {
        let e_t = text_embedding(vec![vec![1.0, 0.0]]);
        let e_f = FusedEmbedding::new(EmbeddingMatrix::from_rows(vec![vec![0.0, 1.0]]).unwrap());
        let blended = linear_fuse(&e_t, &e_f, 0.7).unwrap();
        assert_eq!(blended.matrix().row(0), &[0.7f32, 0.3f32]);
    }

    #[test]
    fn blend_fixed_point_and_linearity_in_coeff() {
        let enc = FixtureTextEncoder::default();
        let e_t = enc.encode("fixed point base").unwrap();
        let same = FusedEmbedding::new(e_t.matrix().clone());
        for coeff in [0.0f32, 0.3, 0.5, 0.77, 1.0] {
            let out = linear_fuse(&e_t, &same, coeff).unwrap();
            assert_eq!(
                out.matrix().tensor().data(),
                e_t.matrix().tensor().data(),
                "fixed point violated at coeff {coeff}"
            );
        }

        let e_f_src = enc.encode("a different embedding").unwrap();
        let e_f = FusedEmbedding::new(e_f_src.matrix().clone());
        let (a, b) = (0.8f32, 0.35f32);
        let out_a = linear_fuse(&e_t, &e_f, a).unwrap();
        let out_b = linear_fuse(&e_t, &e_f, b).unwrap();
        let scale = f64::from(a) - f64::from(b);
        for i in 0..e_t.matrix().tensor().len() {
            let lhs = f64::from(out_a.matrix().tensor().data()[i])
                - f64::from(out_b.matrix().tensor().data()[i]);
            let rhs = scale
                * (f64::from(e_t.matrix().tensor().data()[i])
                    - f64::from(e_f.matrix().tensor().data()[i]));
            assert!((lhs - rhs).abs() < 1e-6, "entry {i}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn coeff_outside_unit_interval_is_rejected() {
        let e_t = text_embedding(vec![vec![0.0]]);
        let e_f = FusedEmbedding::new(EmbeddingMatrix::from_rows(vec![vec![0.0]]).unwrap());
        assert!(matches!(
            linear_fuse(&e_t, &e_f, 1.5),
            Err(FusionError::CoeffRange { .. })
        ));
        assert!(matches!(
            linear_fuse(&e_t, &e_f, -0.1),
            Err(FusionError::CoeffRange { .. })
        ));
    }

    #[test]
    fn concat_project_is_linear_in_text_and_gesture() {
        let w = ProjectionWeights::seeded(3, 2, 99);
        let e_a = text_embedding(vec![vec![0.4, -0.2, 0.9]]);
        let e_b = text_embedding(vec![vec![-0.3, 0.8, 0.1]]);
        let sum = text_embedding(vec![vec![0.1, 0.6, 1.0]]);
        let g = [0.5f32, -0.25];

        let f_sum = concat_project(&sum, &[0.0, 0.0], &w).unwrap();
        let f_a = concat_project(&e_a, &[0.0, 0.0], &w).unwrap();
        let f_b = concat_project(&e_b, &[0.0, 0.0], &w).unwrap();
        for k in 0..3 {
            let lhs = f64::from(f_sum.matrix().row(0)[k]);
            let rhs = f64::from(f_a.matrix().row(0)[k]) + f64::from(f_b.matrix().row(0)[k]);
            assert!((lhs - rhs).abs() < 1e-6);
        }

        let zero = text_embedding(vec![vec![0.0, 0.0, 0.0]]);
        let f_g = concat_project(&zero, &g, &w).unwrap();
        let f_2g = concat_project(&zero, &[1.0, -0.5], &w).unwrap();
        for k in 0..3 {
            let lhs = 2.0 * f64::from(f_g.matrix().row(0)[k]);
            let rhs = f64::from(f_2g.matrix().row(0)[k]);
            assert!((lhs - rhs).abs() < 1e-6);
        }
    }

    #[test]
    fn seeded_projection_is_reproducible_and_seed_sensitive() {
        let a = ProjectionWeights::seeded(32, 16, 7);
        let b = ProjectionWeights::seeded(32, 16, 7);
        let c = ProjectionWeights::seeded(32, 16, 8);
        assert_eq!(a.content_hash(), b.content_hash());
        assert_ne!(a.content_hash(), c.content_hash());
        let bound = 1.0 / (48f64).sqrt();
        assert!(a.tensor().data().iter().all(|&v| (f64::from(v)).abs() <= bound));
    }

    #[test]
    fn build_double_fused_composes_the_two_ops() {
        let enc = FixtureTextEncoder::default();
        let projection = ProjectionWeights::seeded(32, 16, 3);
        let mean = mean_feature((0..16).map(|i| (i as f32) / 16.0 - 0.5).collect());
        let bundle = GestureBundle::new(
            "g",
            mean.clone(),
            projection.clone(),
            FusionConfig::new(0.7, 0.7).unwrap(),
            3,
        )
        .unwrap();

        let caption = "a chef in a kitchen";
        let direct = build_double_fused(caption, &bundle, &enc, 0.5).unwrap();
        // Independent recomposition from the component ops.
        let e_t = enc.encode(caption).unwrap();
        let e_f = concat_project(&e_t, mean.values(), &projection).unwrap();
        let expected = linear_fuse(&e_t, &e_f, 0.5).unwrap();
        assert_eq!(
            direct.matrix().tensor().data(),
            expected.matrix().tensor().data()
        );

        // Determinism and the coeff = 1 endpoint.
        let again = build_double_fused(caption, &bundle, &enc, 0.5).unwrap();
        assert_eq!(
            direct.matrix().tensor().data(),
            again.matrix().tensor().data()
        );
        let plain = build_double_fused(caption, &bundle, &enc, 1.0).unwrap();
        assert_eq!(
            plain.matrix().tensor().data(),
            e_t.matrix().tensor().data()
        );
    }

    #[test]
    fn bundle_roundtrip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let projection = ProjectionWeights::seeded(32, 16, 11);
        let mean = mean_feature(vec![0.25; 16]);
        let bundle = GestureBundle::new(
            "ok",
            mean,
            projection,
            FusionConfig::new(0.7, 0.55).unwrap(),
            11,
        )
        .unwrap();
        let first = dir.path().join("a");
        bundle.save(&first).unwrap();
        let loaded = GestureBundle::load(&first).unwrap();
        let second = dir.path().join("b");
        loaded.save(&second).unwrap();
        for file in ["bundle.json", "mean_feature.tsr", "projection.tsr"] {
            let x = fs::read(first.join(file)).unwrap();
            let y = fs::read(second.join(file)).unwrap();
            assert_eq!(x, y, "file {file} differs after roundtrip");
        }
    }
}
