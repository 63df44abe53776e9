//! Variance-preserving noise schedules: tabulated (alpha_t, sigma_t, w_t).

use serde::{Deserialize, Serialize};

use crate::error::DiffusionError;
use crate::img::Image;

/// Supported schedule constructions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScheduleKind {
    #[serde(rename = "cosine")]
    Cosine,
    #[serde(rename = "linear-beta")]
    LinearBeta,
}

impl std::str::FromStr for ScheduleKind {
    type Err = DiffusionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cosine" => Ok(Self::Cosine),
            "linear-beta" => Ok(Self::LinearBeta),
            other => Err(DiffusionError::UnknownScheduleKind {
                kind: other.to_string(),
            }),
        }
    }
}

/// A timestep index together with its normalized position in (0, 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeStep {
    pub index: usize,
    pub norm: f64,
}

/// Tabulated variance-preserving schedule: `alpha[t]^2 + sigma[t]^2 = 1`,
/// alpha strictly decreasing, sigma strictly increasing, plus per-step loss
/// weights `w` (1.0 by default).
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    alpha: Vec<f64>,
    sigma: Vec<f64>,
    w: Vec<f64>,
}

impl NoiseSchedule {
    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn n_steps(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t]
    }

    pub fn weight(&self, t: usize) -> f64 {
        self.w[t]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigma
    }

    /// Replaces the loss weights (testing and ablation hook).
    pub fn with_weights(mut self, w: Vec<f64>) -> Self {
        assert_eq!(w.len(), self.alpha.len());
        self.w = w;
        self
    }

    pub fn timestep(&self, t: usize) -> Result<TimeStep, DiffusionError> {
        if t >= self.n_steps() {
            return Err(DiffusionError::TimestepOutOfRange {
                t,
                n_steps: self.n_steps(),
            });
        }
        Ok(TimeStep {
            index: t,
            norm: (t as f64 + 0.5) / self.n_steps() as f64,
        })
    }
}

/// Builds a schedule of the given kind. `w[t] = 1` for all t.
pub fn make_schedule(n_steps: usize, kind: ScheduleKind) -> Result<NoiseSchedule, DiffusionError> {
    if n_steps < 1 {
        return Err(DiffusionError::BadStepCount { n_steps });
    }
    let alpha_bar: Vec<f64> = match kind {
        ScheduleKind::Cosine => {
            // Squared-cosine alpha-bar with betas capped at 0.999, rebuilt as
            // a cumulative product so monotonicity is strict and alpha never
            // reaches zero.
            let s = 0.008;
            let f = |u: f64| ((u + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
            let f0 = f(0.0);
            let mut bars = Vec::with_capacity(n_steps);
            let mut prev = 1.0f64;
            for t in 0..n_steps {
                let target = f((t as f64 + 1.0) / n_steps as f64) / f0;
                let beta = (1.0 - target / prev).clamp(1e-8, 0.999);
                prev *= 1.0 - beta;
                bars.push(prev);
            }
            bars
        }
        ScheduleKind::LinearBeta => {
            let (beta_start, beta_end) = (1e-4, 0.02);
            let mut bars = Vec::with_capacity(n_steps);
            let mut prod = 1.0f64;
            for t in 0..n_steps {
                let frac = if n_steps == 1 {
                    0.0
                } else {
                    t as f64 / (n_steps - 1) as f64
                };
                let beta = beta_start + (beta_end - beta_start) * frac;
                prod *= 1.0 - beta;
                bars.push(prod);
            }
            bars
        }
    };
    let alpha: Vec<f64> = alpha_bar.iter().map(|&b| b.sqrt()).collect();
    let sigma: Vec<f64> = alpha_bar.iter().map(|&b| (1.0 - b).sqrt()).collect();
    Ok(NoiseSchedule {
        kind,
        w: vec![1.0; n_steps],
        alpha,
        sigma,
    })
}

/// `z_t = alpha[t] * x + sigma[t] * epsilon`, elementwise.
pub fn noisy_latent(
    x: &Image,
    epsilon: &Image,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<Image, DiffusionError> {
    if x.shape() != epsilon.shape() {
        return Err(DiffusionError::ImageShape {
            expected: x.shape(),
            actual: epsilon.shape(),
        });
    }
    let ts = schedule.timestep(t)?;
    let (a, s) = (schedule.alpha(ts.index), schedule.sigma(ts.index));
    let data: Vec<f32> = x
        .data()
        .iter()
        .zip(epsilon.data())
        .map(|(&xv, &ev)| (a * f64::from(xv) + s * f64::from(ev)) as f32)
        .collect();
    let (c, h, w) = x.shape();
    Ok(Image::new(c, h, w, data))
}
