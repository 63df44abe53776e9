//! Diffusion machinery: noise schedules, the reconstruction loss, DDIM
//! sampling, gradient checking, and the backend abstraction with a trainable
//! toy reference implementation.
//!
//! A real latent-diffusion backend is specified as an out-of-process service
//! (`POST /predict` with the noisy latent, timestep, and conditioning;
//! `POST /step_optimizer` for remote fine-tuning) but is not implemented
//! here; the toy backend covers every contract at desk scale.

pub mod backend;
pub mod checkpoint;
pub mod fixtures;
pub mod gradcheck;
pub mod loss;
pub mod sampler;
pub mod schedule;
pub mod toy;

pub use backend::{hash_params, BackendVjp, DiffusionBackend};
pub use checkpoint::{load_checkpoint, save_checkpoint, ScheduleConfig};
pub use gradcheck::{grad_check, GradCheckReport};
pub use loss::{reconstruction_loss, reconstruction_loss_f64, reconstruction_loss_grads, LossGrads};
pub use sampler::{ddim_sample, ddim_timesteps};
pub use schedule::{make_schedule, noisy_latent, NoiseSchedule, ScheduleKind, TimeStep};
pub use toy::{ToyBackend, ToyBackendConfig};
