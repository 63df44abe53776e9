//! Central finite-difference verification of the analytic gradients; the
//! numerical safety net under both optimization stages.

use rand::seq::SliceRandom;

use crate::diffusion::backend::DiffusionBackend;
use crate::diffusion::loss::{reconstruction_loss_f64, reconstruction_loss_grads};
use crate::diffusion::schedule::NoiseSchedule;
use crate::error::DiffusionError;
use crate::rng::rng_for;

const FD_STEP: f64 = 1e-3;
const MIN_PROBES: usize = 20;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub n_param_probes: usize,
    pub n_econd_probes: usize,
}

/// Compares analytic gradients of the reconstruction loss against central
/// finite differences (h = 1e-3) on a random subset of at least 20 parameters
/// and 20 conditioning entries. Returns the max relative error.
///
/// The backend's parameters are restored before returning.
pub fn grad_check(
    backend: &mut dyn DiffusionBackend,
    x: &[f64],
    e_cond: &[f64],
    epsilon: &[f64],
    t: usize,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<GradCheckReport, DiffusionError> {
    let analytic = reconstruction_loss_grads(backend, x, e_cond, epsilon, t, schedule)?;
    let original = backend.parameters();
    let mut rng = rng_for(seed, &["gradcheck"]);

    let mut max_rel = 0.0f64;
    let mut relerr = |a: f64, fd: f64| {
        let denom = a.abs().max(fd.abs()).max(1e-6);
        max_rel = max_rel.max((a - fd).abs() / denom);
    };

    // Parameter probes: perturb in f32 space and divide by the realized step.
    let n_param_probes = original.len().min(MIN_PROBES + 4);
    let mut param_indices: Vec<usize> = (0..original.len()).collect();
    param_indices.shuffle(&mut rng);
    param_indices.truncate(n_param_probes);
    for &i in &param_indices {
        let mut plus = original.clone();
        plus[i] = (f64::from(plus[i]) + FD_STEP) as f32;
        let mut minus = original.clone();
        minus[i] = (f64::from(minus[i]) - FD_STEP) as f32;
        let realized = f64::from(plus[i]) - f64::from(minus[i]);

        backend.set_parameters(&plus)?;
        let loss_plus = reconstruction_loss_f64(backend, x, e_cond, epsilon, t, schedule)?;
        backend.set_parameters(&minus)?;
        let loss_minus = reconstruction_loss_f64(backend, x, e_cond, epsilon, t, schedule)?;
        let fd = (loss_plus - loss_minus) / realized;
        relerr(analytic.param_grads[i], fd);
    }
    backend.set_parameters(&original)?;

    // Conditioning probes: exact f64 perturbations.
    let n_econd_probes = e_cond.len().min(MIN_PROBES + 4);
    let mut econd_indices: Vec<usize> = (0..e_cond.len()).collect();
    econd_indices.shuffle(&mut rng);
    econd_indices.truncate(n_econd_probes);
    for &i in &econd_indices {
        let mut plus = e_cond.to_vec();
        plus[i] += FD_STEP;
        let mut minus = e_cond.to_vec();
        minus[i] -= FD_STEP;
        let loss_plus = reconstruction_loss_f64(backend, x, &plus, epsilon, t, schedule)?;
        let loss_minus = reconstruction_loss_f64(backend, x, &minus, epsilon, t, schedule)?;
        let fd = (loss_plus - loss_minus) / (2.0 * FD_STEP);
        relerr(analytic.econd_grads[i], fd);
    }

    Ok(GradCheckReport {
        max_rel_error: max_rel,
        n_param_probes,
        n_econd_probes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::schedule::{make_schedule, ScheduleKind};
    use crate::diffusion::toy::{ToyBackend, ToyBackendConfig};
    use rand::Rng;

    #[test]
    fn toy_backend_gradients_agree_with_finite_differences() {
        let mut backend = ToyBackend::new(ToyBackendConfig {
            height: 8,
            width: 8,
            channels: 8,
            d_text: 16,
            seed: 21,
        });
        let sched = make_schedule(40, ScheduleKind::Cosine).unwrap();
        let mut rng = rng_for(4, &["gradcheck-test"]);
        let x: Vec<f64> = (0..64).map(|_| rng.gen_range(0.0..1.0)).collect();
        let eps: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let e: Vec<f64> = (0..4 * 16).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let before = backend.param_hash();
        let report = grad_check(&mut backend, &x, &e, &eps, 17, &sched, 99).unwrap();
        assert!(report.n_param_probes >= 20);
        assert!(report.n_econd_probes >= 20);
        assert!(
            report.max_rel_error <= 1e-2,
            "max rel error {}",
            report.max_rel_error
        );
        assert_eq!(backend.param_hash(), before, "parameters must be restored");
    }
}
