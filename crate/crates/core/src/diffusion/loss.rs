//! The reconstruction objective: `w_t * mean((x_hat(alpha_t x + sigma_t eps, e) - x)^2)`.
//!
//! The mean over elements (rather than a sum) keeps learning rates
//! resolution-independent.

use crate::diffusion::backend::{check_cond, DiffusionBackend};
use crate::diffusion::schedule::NoiseSchedule;
use crate::embedding::EmbeddingMatrix;
use crate::error::DiffusionError;
use crate::img::Image;

/// Loss plus gradients from one fused pass.
pub struct LossGrads {
    pub loss: f64,
    pub param_grads: Vec<f64>,
    pub econd_grads: Vec<f64>,
}

/// Loss value on flat f64 buffers.
pub fn reconstruction_loss_f64(
    backend: &dyn DiffusionBackend,
    x: &[f64],
    e_cond: &[f64],
    epsilon: &[f64],
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<f64, DiffusionError> {
    check_cond(backend, e_cond)?;
    let ts = schedule.timestep(t)?;
    let (a, s) = (schedule.alpha(t), schedule.sigma(t));
    let z: Vec<f64> = x
        .iter()
        .zip(epsilon)
        .map(|(&xv, &ev)| a * xv + s * ev)
        .collect();
    let pred = backend.predict_f64(&z, ts, e_cond)?;
    if pred.iter().any(|v| !v.is_finite()) {
        return Err(DiffusionError::NonFinitePrediction {
            t,
            context: "reconstruction loss forward pass".to_string(),
        });
    }
    let n = x.len() as f64;
    let mse: f64 = pred
        .iter()
        .zip(x)
        .map(|(&p, &xv)| (p - xv) * (p - xv))
        .sum::<f64>()
        / n;
    Ok(schedule.weight(t) * mse)
}

/// Loss value over typed inputs.
pub fn reconstruction_loss(
    backend: &dyn DiffusionBackend,
    x: &Image,
    e_cond: &EmbeddingMatrix,
    epsilon: &Image,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<f64, DiffusionError> {
    if x.shape() != epsilon.shape() {
        return Err(DiffusionError::ImageShape {
            expected: x.shape(),
            actual: epsilon.shape(),
        });
    }
    let xf = flat(x);
    let ef = flat(epsilon);
    reconstruction_loss_f64(backend, &xf, &e_cond.to_f64(), &ef, t, schedule)
}

/// Loss plus gradients w.r.t. backend parameters and the conditioning, in a
/// single forward/backward pass.
pub fn reconstruction_loss_grads(
    backend: &dyn DiffusionBackend,
    x: &[f64],
    e_cond: &[f64],
    epsilon: &[f64],
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<LossGrads, DiffusionError> {
    check_cond(backend, e_cond)?;
    let ts = schedule.timestep(t)?;
    let (a, s, w) = (schedule.alpha(t), schedule.sigma(t), schedule.weight(t));
    let z: Vec<f64> = x
        .iter()
        .zip(epsilon)
        .map(|(&xv, &ev)| a * xv + s * ev)
        .collect();
    let n = x.len() as f64;
    let mut loss = f64::NAN;
    let vjp = backend.vjp_with(&z, ts, e_cond, &mut |pred: &[f64]| {
        let mse: f64 = pred
            .iter()
            .zip(x)
            .map(|(&p, &xv)| (p - xv) * (p - xv))
            .sum::<f64>()
            / n;
        loss = w * mse;
        // dL/dpred = w * 2 (pred - x) / n
        pred.iter()
            .zip(x)
            .map(|(&p, &xv)| w * 2.0 * (p - xv) / n)
            .collect()
    })?;
    if !loss.is_finite() || vjp.prediction.iter().any(|v| !v.is_finite()) {
        return Err(DiffusionError::NonFinitePrediction {
            t,
            context: "reconstruction loss backward pass".to_string(),
        });
    }
    Ok(LossGrads {
        loss,
        param_grads: vjp.param_grads,
        econd_grads: vjp.econd_grads,
    })
}

pub(crate) fn flat(img: &Image) -> Vec<f64> {
    img.data().iter().map(|&v| f64::from(v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::fixtures::{ConstantPredictor, PerfectPredictor};
    use crate::diffusion::schedule::{make_schedule, ScheduleKind};
    use crate::embedding::EmbeddingMatrix;

    fn cond_matrix() -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(vec![vec![0.1, -0.2, 0.3, 0.0]]).unwrap()
    }

    #[test]
    fn perfect_predictor_has_zero_loss() {
        let x = Image::new(1, 2, 2, vec![0.2, 0.4, 0.6, 0.8]);
        let backend = PerfectPredictor::new(&x, 4);
        let eps = Image::new(1, 2, 2, vec![0.5, -0.5, 0.25, -0.25]);
        let sched = make_schedule(10, ScheduleKind::Cosine).unwrap();
        let loss = reconstruction_loss(&backend, &x, &cond_matrix(), &eps, 3, &sched).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn loss_is_linear_in_the_step_weight() {
        let x = Image::new(1, 2, 2, vec![0.2, 0.4, 0.6, 0.8]);
        let backend = ConstantPredictor::new((1, 2, 2), 4, 0.0);
        let eps = Image::zeros(1, 2, 2);
        let sched = make_schedule(10, ScheduleKind::Cosine).unwrap();
        let base = reconstruction_loss(&backend, &x, &cond_matrix(), &eps, 5, &sched).unwrap();
        let doubled_sched = sched.clone().with_weights(vec![2.0; 10]);
        let doubled =
            reconstruction_loss(&backend, &x, &cond_matrix(), &eps, 5, &doubled_sched).unwrap();
        assert!((doubled - 2.0 * base).abs() < 1e-12);
        assert!(base >= 0.0);
    }

    #[test]
    fn constant_zero_predictor_on_ones_gives_unit_loss() {
        let x = Image::filled(1, 2, 2, 1.0);
        let backend = ConstantPredictor::new((1, 2, 2), 4, 0.0);
        let eps = Image::zeros(1, 2, 2);
        let sched = make_schedule(10, ScheduleKind::Cosine).unwrap();
        let loss = reconstruction_loss(&backend, &x, &cond_matrix(), &eps, 0, &sched).unwrap();
        assert_eq!(loss, 1.0);
    }

    #[test]
    fn non_finite_prediction_is_a_training_divergence_error() {
        let x = Image::zeros(1, 2, 2);
        let backend = ConstantPredictor::new((1, 2, 2), 4, f64::NAN);
        let eps = Image::zeros(1, 2, 2);
        let sched = make_schedule(10, ScheduleKind::Cosine).unwrap();
        assert!(matches!(
            reconstruction_loss(&backend, &x, &cond_matrix(), &eps, 0, &sched),
            Err(DiffusionError::NonFinitePrediction { t: 0, .. })
        ));
    }

    #[test]
    fn perfect_predictor_has_zero_conditioning_gradient() {
        let x = Image::new(1, 2, 2, vec![0.2, 0.4, 0.6, 0.8]);
        let backend = PerfectPredictor::new(&x, 4);
        let sched = make_schedule(10, ScheduleKind::Cosine).unwrap();
        let e = cond_matrix().to_f64();
        let eps = vec![0.3f64; 4];
        let out =
            reconstruction_loss_grads(&backend, &flat(&x), &e, &eps, 2, &sched).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.econd_grads.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn zero_weight_annihilates_all_gradients() {
        let cfg = crate::diffusion::toy::ToyBackendConfig {
            height: 4,
            width: 4,
            channels: 3,
            d_text: 4,
            seed: 7,
        };
        let backend = crate::diffusion::toy::ToyBackend::new(cfg);
        let sched = make_schedule(10, ScheduleKind::Cosine)
            .unwrap()
            .with_weights(vec![0.0; 10]);
        let x = vec![0.5f64; 16];
        let eps = vec![0.1f64; 16];
        let e = cond_matrix().to_f64();
        let out = reconstruction_loss_grads(&backend, &x, &e, &eps, 4, &sched).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.param_grads.iter().all(|&g| g == 0.0));
        assert!(out.econd_grads.iter().all(|&g| g == 0.0));
    }
}
