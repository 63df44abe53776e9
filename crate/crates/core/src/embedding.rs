//! Token-sequence embedding matrices and the embedding family produced by the
//! fusion pipeline: text, fused, double-fused, and per-pair optimized
//! embeddings. All share the `[n_tokens x d_text]` shape contract.

use crate::artifacts::Tensor;
use crate::error::TensorError;

/// A finite `[n_tokens x d_text]` matrix with an immutable shape.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    tensor: Tensor,
}

impl EmbeddingMatrix {
    pub fn new(tensor: Tensor) -> Result<Self, TensorError> {
        if tensor.shape().len() != 2 || tensor.shape().contains(&0) {
            return Err(TensorError::ShapeMismatch {
                shape: tensor.shape().to_vec(),
                len: tensor.len(),
            });
        }
        Ok(Self { tensor })
    }

    pub fn from_rows(rows: Vec<Vec<f32>>) -> Result<Self, TensorError> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        let flat: Vec<f32> = rows.into_iter().flatten().collect();
        Self::new(Tensor::new(vec![n, d], flat)?)
    }

    pub fn n_tokens(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn d_text(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let d = self.d_text();
        &self.tensor.data()[i * d..(i + 1) * d]
    }

    pub fn content_hash(&self) -> String {
        self.tensor.content_hash()
    }

    /// Flattened row-major f64 copy for numeric work.
    pub fn to_f64(&self) -> Vec<f64> {
        self.tensor.to_f64()
    }

    pub fn from_f64(
        n_tokens: usize,
        d_text: usize,
        values: &[f64],
    ) -> Result<Self, TensorError> {
        Self::new(Tensor::from_f64(vec![n_tokens, d_text], values)?)
    }
}

macro_rules! embedding_wrapper {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name(EmbeddingMatrix);

        impl $name {
            pub fn new(matrix: EmbeddingMatrix) -> Self {
                Self(matrix)
            }

            pub fn matrix(&self) -> &EmbeddingMatrix {
                &self.0
            }

            pub fn into_matrix(self) -> EmbeddingMatrix {
                self.0
            }
        }
    };
}

embedding_wrapper! {
    /// Output of a text encoder; the conditioning signal the diffusion
    /// backend consumes when no gesture information is fused in.
    TextEmbedding
}

embedding_wrapper! {
    /// Text embedding with the mean gesture feature concatenated per token
    /// and projected back to the text dimension through the frozen linear map.
    FusedEmbedding
}

embedding_wrapper! {
    /// Convex combination of a text embedding and a fused embedding.
    DoubleFusedEmbedding
}

/// A per-training-pair embedding after Stage II optimization. Once frozen it
/// must stay bit-stable; the hash recorded at freeze time is re-checked after
/// fine-tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizedEmbedding {
    matrix: EmbeddingMatrix,
    pair_id: String,
    frozen: bool,
    freeze_hash: Option<String>,
}

impl OptimizedEmbedding {
    pub fn unfrozen(pair_id: impl Into<String>, matrix: EmbeddingMatrix) -> Self {
        Self {
            matrix,
            pair_id: pair_id.into(),
            frozen: false,
            freeze_hash: None,
        }
    }

    /// Marks the embedding frozen, recording its content hash.
    pub fn freeze(mut self) -> Self {
        self.freeze_hash = Some(self.matrix.content_hash());
        self.frozen = true;
        self
    }

    pub fn matrix(&self) -> &EmbeddingMatrix {
        &self.matrix
    }

    pub fn pair_id(&self) -> &str {
        &self.pair_id
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze_hash(&self) -> Option<&str> {
        self.freeze_hash.as_deref()
    }

    /// True when the current contents still match the hash recorded at
    /// freeze time.
    pub fn verify_frozen(&self) -> bool {
        match &self.freeze_hash {
            Some(h) => *h == self.matrix.content_hash(),
            None => false,
        }
    }
}
