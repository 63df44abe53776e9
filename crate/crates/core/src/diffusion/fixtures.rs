//! Parameter-free oracle backends for tests and numerical checks.

use crate::diffusion::backend::{BackendVjp, DiffusionBackend};
use crate::diffusion::schedule::TimeStep;
use crate::error::DiffusionError;
use crate::img::Image;

/// Predicts a fixed target image regardless of input.
pub struct PerfectPredictor {
    target: Vec<f64>,
    shape: (usize, usize, usize),
    d_text: usize,
}

impl PerfectPredictor {
    pub fn new(target: &Image, d_text: usize) -> Self {
        Self {
            target: target.data().iter().map(|&v| f64::from(v)).collect(),
            shape: target.shape(),
            d_text,
        }
    }
}

impl DiffusionBackend for PerfectPredictor {
    fn kind(&self) -> &'static str {
        "fixture-perfect"
    }

    fn image_shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    fn d_text(&self) -> usize {
        self.d_text
    }

    fn n_params(&self) -> usize {
        0
    }

    fn predict_f64(
        &self,
        _z_t: &[f64],
        _t: TimeStep,
        _e_cond: &[f64],
    ) -> Result<Vec<f64>, DiffusionError> {
        Ok(self.target.clone())
    }

    fn vjp_with(
        &self,
        _z_t: &[f64],
        _t: TimeStep,
        e_cond: &[f64],
        make_upstream: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    ) -> Result<BackendVjp, DiffusionError> {
        let prediction = self.target.clone();
        let _ = make_upstream(&prediction);
        Ok(BackendVjp {
            prediction,
            param_grads: Vec::new(),
            econd_grads: vec![0.0; e_cond.len()],
        })
    }

    fn parameters(&self) -> Vec<f32> {
        Vec::new()
    }

    fn set_parameters(&mut self, _flat: &[f32]) -> Result<(), DiffusionError> {
        Ok(())
    }

    fn named_parameters(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        Vec::new()
    }

    fn train_mode(&mut self, _on: bool) {}

    fn is_trainable(&self) -> bool {
        false
    }
}

/// Predicts a constant value everywhere (NaN allowed, for divergence tests).
pub struct ConstantPredictor {
    shape: (usize, usize, usize),
    d_text: usize,
    value: f64,
}

impl ConstantPredictor {
    pub fn new(shape: (usize, usize, usize), d_text: usize, value: f64) -> Self {
        Self {
            shape,
            d_text,
            value,
        }
    }
}

impl DiffusionBackend for ConstantPredictor {
    fn kind(&self) -> &'static str {
        "fixture-constant"
    }

    fn image_shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    fn d_text(&self) -> usize {
        self.d_text
    }

    fn n_params(&self) -> usize {
        0
    }

    fn predict_f64(
        &self,
        _z_t: &[f64],
        _t: TimeStep,
        _e_cond: &[f64],
    ) -> Result<Vec<f64>, DiffusionError> {
        let (c, h, w) = self.shape;
        Ok(vec![self.value; c * h * w])
    }

    fn vjp_with(
        &self,
        z_t: &[f64],
        t: TimeStep,
        e_cond: &[f64],
        make_upstream: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    ) -> Result<BackendVjp, DiffusionError> {
        let prediction = self.predict_f64(z_t, t, e_cond)?;
        let _ = make_upstream(&prediction);
        Ok(BackendVjp {
            prediction,
            param_grads: Vec::new(),
            econd_grads: vec![0.0; e_cond.len()],
        })
    }

    fn parameters(&self) -> Vec<f32> {
        Vec::new()
    }

    fn set_parameters(&mut self, _flat: &[f32]) -> Result<(), DiffusionError> {
        Ok(())
    }

    fn named_parameters(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        Vec::new()
    }

    fn train_mode(&mut self, _on: bool) {}

    fn is_trainable(&self) -> bool {
        false
    }
}
