use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `alpha_max * exp(-5 p^2)` with `p = 1 - min(step, T) / T`.
pub fn alpha_at(step_idx: u64, ramp_steps: u64, alpha_max: f64) -> f64 {
    let t = ramp_steps.max(1) as f64;
    let p = 1.0 - step_idx.min(ramp_steps.max(1)) as f64 / t;
    alpha_max * (-5.0 * p * p).exp()
}

/// EMA decay ramp-up. `T` is fixed from the corpus size at the start of
/// training and does not follow the active set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaSchedule {
    pub ramp_epochs: usize,
    pub initial_size: usize,
    pub batch_size: usize,
    pub alpha_max: f64,
}

impl AlphaSchedule {
    pub fn new(ramp_epochs: usize, initial_size: usize, batch_size: usize, alpha_max: f64) -> Result<Self> {
        if batch_size == 0 || initial_size == 0 || ramp_epochs == 0 {
            return Err(Error::Config(format!(
                "ramp-up needs E, L and B >= 1 (got {ramp_epochs}, {initial_size}, {batch_size})"
            )));
        }
        if !(0.0..1.0).contains(&alpha_max) {
            return Err(Error::Config(format!("alpha_max {alpha_max} outside [0, 1)")));
        }
        Ok(Self {
            ramp_epochs,
            initial_size,
            batch_size,
            alpha_max,
        })
    }

    /// `T = E * ceil(L / B)`.
    pub fn ramp_steps(&self) -> u64 {
        (self.ramp_epochs * self.initial_size.div_ceil(self.batch_size)) as u64
    }

    pub fn alpha(&self, step_idx: u64) -> f64 {
        alpha_at(step_idx, self.ramp_steps(), self.alpha_max)
    }
}
