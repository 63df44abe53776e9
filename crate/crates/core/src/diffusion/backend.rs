//! The denoiser backend abstraction.
//!
//! Backends predict the clean image (`x_hat`-parameterization) from a noisy
//! latent, a timestep, and a conditioning embedding. An epsilon-prediction
//! backend must convert via `x_hat = (z_t - sigma_t * eps_hat) / alpha_t`
//! before returning.

use sha2::{Digest, Sha256};

use crate::diffusion::schedule::TimeStep;
use crate::error::DiffusionError;
use crate::img::Image;

/// Gradients from one fused forward/backward pass.
pub struct BackendVjp {
    /// Flattened prediction (f64, same layout as the image tensor).
    pub prediction: Vec<f64>,
    /// Gradient w.r.t. the flat parameter vector.
    pub param_grads: Vec<f64>,
    /// Gradient w.r.t. the flattened `[n_tokens x d_text]` conditioning.
    pub econd_grads: Vec<f64>,
}

/// A trainable denoiser.
///
/// `predict` must be deterministic given (z_t, t, e_cond, parameters) and
/// must never mutate parameters. The flat parameter view has stable ordering.
pub trait DiffusionBackend: Send + Sync {
    fn kind(&self) -> &'static str;

    /// (channels, height, width) of the images the backend operates on.
    fn image_shape(&self) -> (usize, usize, usize);

    /// Expected conditioning feature dimension per token.
    fn d_text(&self) -> usize;

    fn n_params(&self) -> usize;

    /// Denoised-image prediction on flat f64 buffers (row-major [c,h,w];
    /// e_cond is row-major [n_tokens x d_text]).
    fn predict_f64(
        &self,
        z_t: &[f64],
        t: TimeStep,
        e_cond: &[f64],
    ) -> Result<Vec<f64>, DiffusionError>;

    /// Forward pass plus vector-Jacobian product. `make_upstream` receives
    /// the prediction and returns dL/d(prediction); the backend backpropagates
    /// it to parameters and conditioning in the same pass.
    fn vjp_with(
        &self,
        z_t: &[f64],
        t: TimeStep,
        e_cond: &[f64],
        make_upstream: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    ) -> Result<BackendVjp, DiffusionError>;

    /// Flat f32 parameter view in stable order.
    fn parameters(&self) -> Vec<f32>;

    /// Replaces all parameters. Fails with [`DiffusionError::Frozen`] when
    /// train mode is off.
    fn set_parameters(&mut self, flat: &[f32]) -> Result<(), DiffusionError>;

    /// Named parameter tensors (name, shape, values) in the same stable order
    /// as [`Self::parameters`]; used for checkpointing.
    fn named_parameters(&self) -> Vec<(String, Vec<usize>, Vec<f32>)>;

    fn train_mode(&mut self, on: bool);

    fn is_trainable(&self) -> bool;

    /// Digest over the flat f32 parameter view; changes iff any parameter
    /// value changes.
    fn param_hash(&self) -> String {
        hash_params(&self.parameters())
    }

    /// Image-typed prediction convenience.
    fn predict(
        &self,
        z_t: &Image,
        t: TimeStep,
        e_cond: &[f64],
    ) -> Result<Image, DiffusionError> {
        let expected = self.image_shape();
        if z_t.shape() != expected {
            return Err(DiffusionError::ImageShape {
                expected,
                actual: z_t.shape(),
            });
        }
        let z: Vec<f64> = z_t.data().iter().map(|&v| f64::from(v)).collect();
        let out = self.predict_f64(&z, t, e_cond)?;
        let (c, h, w) = expected;
        Ok(Image::new(c, h, w, out.iter().map(|&v| v as f32).collect()))
    }
}

/// SHA-256 over little-endian f32 parameter bytes.
pub fn hash_params(params: &[f32]) -> String {
    let mut hasher = Sha256::new();
    for v in params {
        hasher.update(v.to_le_bytes());
    }
    hex::encode(hasher.finalize())
}

/// Validates a flattened conditioning buffer against the backend contract.
pub fn check_cond(backend: &dyn DiffusionBackend, e_cond: &[f64]) -> Result<usize, DiffusionError> {
    let d = backend.d_text();
    if e_cond.is_empty() || !e_cond.len().is_multiple_of(d) {
        return Err(DiffusionError::CondShape {
            expected: d,
            actual: e_cond.len(),
        });
    }
    Ok(e_cond.len() / d)
}
